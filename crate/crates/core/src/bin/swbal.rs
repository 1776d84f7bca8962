fn main() {
    std::process::exit(swbal::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(aphasia_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(chaoslab_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(trajmap_cli::run(std::env::args_os()));
}

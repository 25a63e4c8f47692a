fn main() {
    std::process::exit(avhubert_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(harlstm_cli::run(std::env::args_os()));
}

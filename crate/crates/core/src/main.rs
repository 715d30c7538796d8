fn main() {
    std::process::exit(amva::cli::run_subcommand(std::env::args_os()));
}

fn main() {
    std::process::exit(actorid::cli::run_command(std::env::args_os()));
}

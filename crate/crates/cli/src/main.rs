fn main() {
    std::process::exit(raylab::cli_run(std::env::args_os()));
}

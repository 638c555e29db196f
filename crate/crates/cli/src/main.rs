fn main() {
    std::process::exit(capsx_cli::dispatch(std::env::args_os()));
}

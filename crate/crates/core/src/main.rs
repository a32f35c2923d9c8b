fn main() {
    std::process::exit(synthrad::pipeline::cli_dispatch(std::env::args_os()));
}

fn main() {
    std::process::exit(unstable_sysid::harness::cli_dispatch(std::env::args_os()));
}

fn main() {
    ct_icp_cli::init_logging();
    std::process::exit(ct_icp_cli::run(std::env::args_os()));
}

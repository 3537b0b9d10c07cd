fn main() {
    std::process::exit(treefit::harness::cli::cli_main(std::env::args_os()));
}

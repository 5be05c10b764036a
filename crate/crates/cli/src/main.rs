fn main() {
    std::process::exit(gcnstab::args::run_cli(std::env::args_os()));
}

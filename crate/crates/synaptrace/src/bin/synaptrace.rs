fn main() {
    std::process::exit(synaptrace::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(ctwin::shell::cli(std::env::args_os()));
}

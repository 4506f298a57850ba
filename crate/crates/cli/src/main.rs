fn main() {
    std::process::exit(xmodal::run(std::env::args_os().skip(1)));
}

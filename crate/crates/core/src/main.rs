fn main() {
    std::process::exit(qkd3::cli::main_entry());
}

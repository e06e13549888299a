fn main() {
    std::process::exit(lmapf_cm::cli::main_with_args(std::env::args_os()));
}

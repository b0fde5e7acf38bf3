fn main() {
    // Die quietly on a closed pipe (`aegispat patterns list | head`) the
    // way other line-oriented tools do, instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(aegispat::cli::run(std::env::args_os()));
}

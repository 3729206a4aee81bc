fn main() {
    // Behave like other Unix tools when the reader of stdout goes away.
    // SAFETY: restoring the default disposition before any threads start.
    unsafe { libc::signal(libc::SIGPIPE, libc::SIG_DFL) };
    std::process::exit(synmirror::cli::run(std::env::args_os()));
}

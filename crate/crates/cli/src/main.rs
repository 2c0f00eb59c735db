use std::io::Write;

fn main() {
    ctxsql_cli::init_logging();
    let mut out = std::io::stdout().lock();
    let code = ctxsql_cli::run(std::env::args_os(), &mut out);
    let _ = out.flush();
    std::process::exit(code);
}

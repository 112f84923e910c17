//! Line-oriented SQL shell.

use std::io::{self, BufRead, Write};

use crate::sql::{split_statements, Session};

/// Read `;`-terminated statements from `input` until EOF or `\quit` and
/// write each result (or `ERROR: ...`) to `output`. Text left without a
/// terminating `;` at EOF is executed as a final statement.
pub fn run_shell(session: &mut Session, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    let mut pending = String::new();
    for line in input.lines() {
        let line = line?;
        if line.trim() == "\\quit" || line.trim() == "\\q" {
            return output.flush();
        }
        pending.push_str(&line);
        pending.push('\n');
        let (done, rest) = split_statements(&pending);
        for stmt in done {
            run_one(session, &stmt, &mut output)?;
        }
        pending = rest;
    }
    if !pending.trim().is_empty() {
        let stmt = pending.clone();
        run_one(session, &stmt, &mut output)?;
    }
    output.flush()
}

fn run_one(session: &mut Session, stmt: &str, output: &mut impl Write) -> io::Result<()> {
    match session.execute(stmt.trim_start_matches('\n')) {
        Ok(r) => write!(output, "{r}"),
        Err(e) => writeln!(output, "ERROR: {e}"),
    }
}

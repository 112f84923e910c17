use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::wire::Timestamp;

pub const DEFAULT_BLOCK: u64 = 1000;

struct State {
    next: u64,
    reserved: u64,
}

/// Issues strictly increasing timestamps. The reserved high-water mark is
/// persisted in blocks so a restart resumes above anything ever issued.
pub struct TimestampOracle {
    state: Mutex<State>,
    path: Option<PathBuf>,
    block: u64,
}

impl TimestampOracle {
    pub fn in_memory() -> TimestampOracle {
        TimestampOracle {
            state: Mutex::new(State { next: 1, reserved: u64::MAX }),
            path: None,
            block: DEFAULT_BLOCK,
        }
    }

    /// Open (or create) an oracle whose high-water mark lives at `path`.
    /// `floor` is a timestamp already known to be used, e.g. the newest
    /// commit found in the server's log.
    pub fn open(path: &Path, block: u64, floor: Timestamp) -> io::Result<TimestampOracle> {
        let reserved = match fs::read_to_string(path) {
            Ok(text) => text.trim().parse::<u64>().map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e),
        };
        let next = reserved.max(floor.0) + 1;
        Ok(TimestampOracle {
            state: Mutex::new(State { next, reserved: next - 1 }),
            path: Some(path.to_path_buf()),
            block: block.max(1),
        })
    }

    pub fn next(&self) -> io::Result<Timestamp> {
        let mut st = self.state.lock().unwrap();
        let ts = st.next;
        if ts > st.reserved {
            let mut reserved = st.reserved;
            while reserved < ts {
                reserved += self.block;
            }
            if let Some(path) = &self.path {
                persist(path, reserved)?;
            }
            st.reserved = reserved;
        }
        st.next += 1;
        Ok(Timestamp(ts))
    }
}

fn persist(path: &Path, reserved: u64) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        writeln!(f, "{reserved}")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

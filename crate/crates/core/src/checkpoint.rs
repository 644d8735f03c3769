//! Versioned plain-text checkpoints of the training loop.
//!
//! ```text
//! multidds-checkpoint 1
//! step 640
//! update_index 2
//! rng <64 hex seed chars> <stream> <word_pos>
//! best_aggregate 1.2034
//! stale_updates 0
//! frozen_active -
//! theta 36
//! <one value per line>
//! psi 4
//! <one value per line>
//! moving_average -
//! ```
//!
//! `psi` and `moving_average` are `-` when the run has no scorer or no
//! stored averages. Values use Rust's shortest round-trip decimal format.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &str = "multidds-checkpoint";
const VERSION: u32 = 1;

/// Position of the run's random stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub update_index: usize,
    pub theta: Vec<f64>,
    pub psi: Option<Vec<f64>>,
    pub rng: RngState,
    pub moving_average: Option<Vec<Vec<f64>>>,
    pub moving_average_observations: Option<Vec<u64>>,
    pub frozen_active: Option<Vec<usize>>,
    pub best_aggregate: f64,
    pub stale_updates: usize,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        // writing to a String cannot fail
        let _ = writeln!(w, "{MAGIC} {VERSION}");
        let _ = writeln!(w, "step {}", self.step);
        let _ = writeln!(w, "update_index {}", self.update_index);
        let seed: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(w, "rng {seed} {} {}", self.rng.stream, self.rng.word_pos);
        let _ = writeln!(w, "best_aggregate {}", self.best_aggregate);
        let _ = writeln!(w, "stale_updates {}", self.stale_updates);
        match &self.frozen_active {
            Some(a) => {
                let list: Vec<String> = a.iter().map(usize::to_string).collect();
                let _ = writeln!(w, "frozen_active {}", list.join(","));
            }
            None => {
                let _ = writeln!(w, "frozen_active -");
            }
        }
        let _ = writeln!(w, "theta {}", self.theta.len());
        for v in &self.theta {
            let _ = writeln!(w, "{v}");
        }
        match &self.psi {
            Some(psi) => {
                let _ = writeln!(w, "psi {}", psi.len());
                for v in psi {
                    let _ = writeln!(w, "{v}");
                }
            }
            None => {
                let _ = writeln!(w, "psi -");
            }
        }
        match (&self.moving_average, &self.moving_average_observations) {
            (Some(avgs), Some(obs)) => {
                let width = avgs.first().map_or(0, Vec::len);
                let _ = writeln!(w, "moving_average {} {width}", avgs.len());
                let counts: Vec<String> = obs.iter().map(u64::to_string).collect();
                let _ = writeln!(w, "{}", counts.join(" "));
                for row in avgs {
                    let vals: Vec<String> = row.iter().map(f64::to_string).collect();
                    let _ = writeln!(w, "{}", vals.join(" "));
                }
            }
            _ => {
                let _ = writeln!(w, "moving_average -");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let header = lines.next()?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| lines.err("not a checkpoint file"))?;
        if version != VERSION.to_string() {
            return Err(lines.err(&format!("unsupported checkpoint version {version}")));
        }
        let step = lines
            .keyed("step")?
            .parse()
            .map_err(|_| lines.err("bad step"))?;
        let update_index = lines
            .keyed("update_index")?
            .parse()
            .map_err(|_| lines.err("bad update_index"))?;

        let rng_line = lines.keyed("rng")?;
        let parts: Vec<&str> = rng_line.split_whitespace().collect();
        if parts.len() != 3 || parts[0].len() != 64 {
            return Err(lines.err("bad rng line"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&parts[0][2 * i..2 * i + 2], 16)
                .map_err(|_| lines.err("bad rng seed"))?;
        }
        let rng = RngState {
            seed,
            stream: parts[1].parse().map_err(|_| lines.err("bad rng stream"))?,
            word_pos: parts[2]
                .parse()
                .map_err(|_| lines.err("bad rng position"))?,
        };

        let best_aggregate = lines
            .keyed("best_aggregate")?
            .parse()
            .map_err(|_| lines.err("bad best_aggregate"))?;
        let stale_updates = lines
            .keyed("stale_updates")?
            .parse()
            .map_err(|_| lines.err("bad stale_updates"))?;
        let frozen = lines.keyed("frozen_active")?;
        let frozen_active = if frozen == "-" {
            None
        } else {
            Some(
                frozen
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| lines.err("bad frozen_active")))
                    .collect::<Result<Vec<usize>>>()?,
            )
        };

        let theta = lines
            .vector("theta")?
            .ok_or_else(|| lines.err("theta is required"))?;
        let psi = lines.vector("psi")?;

        let ma = lines.keyed("moving_average")?;
        let (moving_average, moving_average_observations) = if ma == "-" {
            (None, None)
        } else {
            let dims: Vec<usize> = ma
                .split_whitespace()
                .map(|s| {
                    s.parse()
                        .map_err(|_| lines.err("bad moving_average header"))
                })
                .collect::<Result<_>>()?;
            let [n, width] = dims[..] else {
                return Err(lines.err("bad moving_average header"));
            };
            let obs: Vec<u64> = lines
                .next()?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| lines.err("bad observation count")))
                .collect::<Result<_>>()?;
            let mut avgs = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = lines
                    .next()?
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| lines.err("bad average value")))
                    .collect::<Result<_>>()?;
                if row.len() != width {
                    return Err(lines.err("moving-average row has the wrong width"));
                }
                avgs.push(row);
            }
            if obs.len() != n {
                return Err(lines.err("observation count length mismatch"));
            }
            (Some(avgs), Some(obs))
        };

        Ok(Checkpoint {
            step,
            update_index,
            theta,
            psi,
            rng,
            moving_average,
            moving_average_observations,
            frozen_active,
            best_aggregate,
            stale_updates,
        })
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// truncated checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    lineno: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            lineno: 0,
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("checkpoint line {}: {msg}", self.lineno))
    }

    fn next(&mut self) -> Result<&'a str> {
        let (i, l) = self
            .inner
            .next()
            .ok_or_else(|| Error::Parse("checkpoint ends early".into()))?;
        self.lineno = i + 1;
        Ok(l.trim())
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ => Err(self.err(&format!("expected {key:?}"))),
        }
    }

    fn vector(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let head = self.keyed(key)?;
        if head == "-" {
            return Ok(None);
        }
        let n: usize = head
            .parse()
            .map_err(|_| self.err(&format!("bad {key} length")))?;
        (0..n)
            .map(|_| {
                let l = self.next()?;
                l.parse()
                    .map_err(|_| self.err(&format!("bad {key} value {l:?}")))
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }
}

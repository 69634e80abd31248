//! Out-of-process predictors over a line protocol on stdio.
//!
//! The harness writes `TRAIN <n>` followed by `n` lines `poi t` (one block
//! per contiguous training segment), then for every prediction `PREDICT <m>`
//! followed by `m` context lines. The predictor answers each `PREDICT` with
//! one line: the predicted POI, optionally followed by the full distribution
//! `p0 p1 … pN-1`. A fresh process is started for every fold.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{Prediction, PredictiveDistribution, Predictor, PredictorSpec};
use crate::error::{Error, Result};
use crate::model::{PoiId, Visit};

pub const DEFAULT_CONTEXT_WINDOW: usize = 16;
/// Replies must sum to one within this tolerance; decimal output loses a
/// little precision.
pub const REPLY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub context_window: usize,
}

impl ExternalSpec {
    pub fn new(command: Vec<String>) -> Self {
        ExternalSpec {
            command,
            context_window: DEFAULT_CONTEXT_WINDOW,
        }
    }
}

struct Session {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    /// Lines read from the predictor so far.
    line: usize,
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalPredictor {
    spec: ExternalSpec,
    n: usize,
    session: Option<Session>,
    /// Whether the last reply carried a distribution.
    distributions: bool,
}

fn pipe_err(e: std::io::Error) -> Error {
    Error::Protocol {
        line: 0,
        msg: format!("predictor pipe: {e}"),
    }
}

fn write_visits(w: &mut impl Write, header: &str, v: &[Visit]) -> std::io::Result<()> {
    writeln!(w, "{header} {}", v.len())?;
    for x in v {
        writeln!(w, "{} {}", x.poi, x.t)?;
    }
    Ok(())
}

impl ExternalPredictor {
    pub fn new(spec: ExternalSpec, alphabet_len: usize) -> Result<Self> {
        if spec.command.is_empty() {
            return Err(Error::invalid("external predictor command is empty"));
        }
        Ok(ExternalPredictor {
            spec,
            n: alphabet_len,
            session: None,
            distributions: true,
        })
    }

    fn start(&mut self) -> Result<&mut Session> {
        self.session = None;
        let mut child = Command::new(&self.spec.command[0])
            .args(&self.spec.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::invalid(format!("cannot start {:?}: {e}", self.spec.command[0])))?;
        let stdin = BufWriter::new(child.stdin.take().unwrap());
        let stdout = BufReader::new(child.stdout.take().unwrap());
        Ok(self.session.insert(Session {
            child,
            stdin,
            stdout,
            line: 0,
        }))
    }

    /// Whether replies so far included distributions.
    pub fn has_distributions(&self) -> bool {
        self.distributions
    }
}

/// Parses one reply line. `line` is its 1-based number in the predictor's output.
pub fn parse_reply(text: &str, n: usize, line: usize) -> Result<Prediction> {
    let err = |msg: String| Error::Protocol { line, msg };
    let mut tokens = text.split_ascii_whitespace();
    let poi: PoiId = tokens
        .next()
        .ok_or_else(|| err("empty reply".into()))?
        .parse()
        .map_err(|_| err(format!("bad poi id in {text:?}")))?;
    if poi as usize >= n {
        return Err(err(format!("poi {poi} outside the alphabet of {n}")));
    }
    let probs = tokens
        .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad probability {t:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    let distribution = match probs.len() {
        0 => None,
        k if k == n => Some(
            PredictiveDistribution::new(probs, REPLY_TOLERANCE)
                .map_err(|e| err(e.to_string()))?,
        ),
        k => return Err(err(format!("expected 0 or {n} probabilities, got {k}"))),
    };
    Ok(Prediction { poi, distribution })
}

impl Predictor for ExternalPredictor {
    fn fit(&mut self, segments: &[&[Visit]]) -> Result<()> {
        let s = self.start()?;
        for seg in segments {
            write_visits(&mut s.stdin, "TRAIN", seg).map_err(pipe_err)?;
        }
        Ok(())
    }

    fn extend(&mut self, _: &[Visit]) -> Result<()> {
        Err(Error::invalid("external predictors cannot be extended in place"))
    }

    fn supports_extend(&self) -> bool {
        false
    }

    fn context_window(&self) -> usize {
        self.spec.context_window
    }

    fn predict(&mut self, context: &[Visit]) -> Result<Prediction> {
        let n = self.n;
        let s = self
            .session
            .as_mut()
            .ok_or_else(|| Error::invalid("external predictor used before training"))?;
        write_visits(&mut s.stdin, "PREDICT", context).map_err(pipe_err)?;
        s.stdin.flush().map_err(pipe_err)?;
        let mut reply = String::new();
        let read = s.stdout.read_line(&mut reply).map_err(pipe_err)?;
        s.line += 1;
        if read == 0 {
            return Err(Error::Protocol {
                line: s.line,
                msg: "predictor closed its output".into(),
            });
        }
        let p = parse_reply(reply.trim_end(), n, s.line)?;
        self.distributions &= p.distribution.is_some();
        Ok(p)
    }
}

fn read_block(
    input: &mut impl BufRead,
    count: usize,
    line: &mut usize,
) -> Result<Vec<Visit>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = String::new();
    for _ in 0..count {
        buf.clear();
        *line += 1;
        if input.read_line(&mut buf).map_err(pipe_err)? == 0 {
            return Err(Error::Protocol {
                line: *line,
                msg: "unexpected end of input".into(),
            });
        }
        let mut it = buf.split_ascii_whitespace();
        let parsed = (|| {
            let poi = it.next()?.parse().ok()?;
            let t = it.next()?.parse().ok()?;
            it.next().is_none().then_some(Visit { poi, t })
        })();
        out.push(parsed.ok_or_else(|| Error::Protocol {
            line: *line,
            msg: format!("expected `poi t`, got {:?}", buf.trim_end()),
        })?);
    }
    Ok(out)
}

/// Runs a native model as an external predictor: the other end of
/// [`ExternalPredictor`]. Returns when the input ends.
pub fn serve(
    spec: &PredictorSpec,
    alphabet_len: usize,
    seed: u64,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<()> {
    let mut input = input;
    let mut model = spec.build(alphabet_len, seed)?;
    let mut segments: Vec<Vec<Visit>> = Vec::new();
    let mut trained = false;
    let mut line = 0usize;
    let mut buf = String::new();
    loop {
        buf.clear();
        line += 1;
        if input.read_line(&mut buf).map_err(pipe_err)? == 0 {
            return Ok(());
        }
        let cmd = buf.trim_end();
        let (word, count) = match cmd.split_once(' ') {
            Some((w, c)) => (w, c.trim().parse::<usize>().ok()),
            None => (cmd, None),
        };
        let count = count.ok_or_else(|| Error::Protocol {
            line,
            msg: format!("expected `TRAIN <n>` or `PREDICT <m>`, got {cmd:?}"),
        })?;
        match word {
            "TRAIN" => {
                segments.push(read_block(&mut input, count, &mut line)?);
                trained = false;
            }
            "PREDICT" => {
                let context = read_block(&mut input, count, &mut line)?;
                if !trained {
                    let refs: Vec<&[Visit]> = segments.iter().map(Vec::as_slice).collect();
                    model.fit(&refs)?;
                    trained = true;
                }
                let p = model.predict(&context)?;
                let mut reply = p.poi.to_string();
                if let Some(d) = &p.distribution {
                    for x in d.probs() {
                        reply.push(' ');
                        reply.push_str(&x.to_string());
                    }
                }
                writeln!(output, "{reply}").map_err(pipe_err)?;
                output.flush().map_err(pipe_err)?;
            }
            _ => {
                return Err(Error::Protocol {
                    line,
                    msg: format!("unknown command {word:?}"),
                })
            }
        }
    }
}

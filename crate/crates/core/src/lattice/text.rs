//! Line-oriented lattice text format.
//!
//! ```text
//! <src> <dst> <word> <graph_cost>,<acoustic_cost>
//! <state> <final_cost>
//! ```
//!
//! The first state mentioned is the start state.

use std::io::{BufRead, Write};

use super::{Cost, Lattice};
use crate::error::{Error, ParseErrorKind, Result};
use crate::vocab::{Vocabulary, EPSILON};

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    /// Accept `<eps>` word labels.
    pub allow_epsilon: bool,
    /// Map out-of-vocabulary words to `<unk>` when the vocabulary has one.
    pub map_unknown: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            allow_epsilon: false,
            map_unknown: true,
        }
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("bad cost {field:?}")))?;
    if v.is_nan() {
        return Err(Error::parse(line, "NaN cost"));
    }
    Ok(v)
}

fn parse_state(field: &str, line: usize) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::parse(line, format!("bad state id {field:?}")))
}

impl Lattice {
    pub fn read_text<R: BufRead>(reader: R, vocab: &Vocabulary, opts: ReadOptions) -> Result<Lattice> {
        let mut lat = Lattice::new();
        let mut start = None;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.len() {
                0 => continue,
                1 | 2 => {
                    let s = parse_state(fields[0], lineno)?;
                    let cost = match fields.get(1) {
                        Some(f) => parse_f64(f, lineno)?,
                        None => 0.0,
                    };
                    start.get_or_insert(s);
                    lat.set_final(s, cost);
                }
                4 => {
                    let src = parse_state(fields[0], lineno)?;
                    let dst = parse_state(fields[1], lineno)?;
                    let word = if opts.map_unknown {
                        vocab.id_or_unk(fields[2])
                    } else {
                        vocab.require(fields[2])
                    }?;
                    if word == EPSILON && !opts.allow_epsilon {
                        return Err(Error::parse(lineno, "epsilon arc not allowed"));
                    }
                    let (g, a) = fields[3]
                        .split_once(',')
                        .ok_or_else(|| Error::parse(lineno, "cost must be <graph>,<acoustic>"))?;
                    let cost = Cost::new(parse_f64(g, lineno)?, parse_f64(a, lineno)?);
                    start.get_or_insert(src);
                    lat.add_arc(src, dst, word, cost);
                }
                n => return Err(Error::parse(lineno, format!("expected 1, 2 or 4 fields, got {n}"))),
            }
        }
        let start = start.ok_or(Error::Parse {
            line: 0,
            kind: ParseErrorKind::NoStartState,
        })?;
        lat.set_start(start);
        Ok(lat)
    }

    /// Writes states in topological order, start first.
    pub fn write_text<W: Write>(&self, mut w: W, vocab: &Vocabulary) -> Result<()> {
        let order = self.topo_order()?;
        let start = self.start();
        if self.out_arc_ids(start).is_empty() && !self.is_final(start) {
            return Err(Error::InvalidLattice("start state has no arcs and is not final".into()));
        }
        let states = std::iter::once(start).chain(order.iter().copied().filter(|&s| s != start));
        for s in states {
            for a in self.out_arcs(s) {
                let word = vocab
                    .token(a.word)
                    .ok_or(Error::UnknownTokenId(a.word))?;
                writeln!(w, "{} {} {} {},{}", a.src, a.dst, word, a.cost.graph, a.cost.acoustic)?;
            }
            if let Some(f) = self.final_cost(s) {
                writeln!(w, "{s} {f}")?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self, vocab: &Vocabulary) -> Result<String> {
        let mut buf = Vec::new();
        self.write_text(&mut buf, vocab)?;
        Ok(String::from_utf8(buf).expect("lattice text is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::new();
        v.insert("hello");
        v.insert("world");
        v
    }

    #[test]
    fn parses_minimal_lattice() {
        let lat = Lattice::read_text(&b"0 1 hello 0.5,1.2\n1 0.0\n"[..], &vocab(), ReadOptions::default())
            .unwrap();
        assert_eq!(lat.num_states(), 2);
        assert_eq!(lat.num_arcs(), 1);
        assert_eq!(lat.start(), 0);
        assert_eq!(lat.arcs()[0].cost, Cost::new(0.5, 1.2));
        assert_eq!(lat.final_cost(1), Some(0.0));
    }

    #[test]
    fn empty_stream_has_no_start() {
        let err = Lattice::read_text(&b"\n\n"[..], &vocab(), ReadOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                kind: ParseErrorKind::NoStartState,
                ..
            }
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Lattice::read_text(&b"0 1 hello 0.5\n"[..], &vocab(), ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Lattice::read_text(&b"0 1 hello 1,1\n1 x\n"[..], &vocab(), ReadOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_words() {
        let err = Lattice::read_text(&b"0 1 nope 1,1\n1 0\n"[..], &vocab(), ReadOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::UnknownToken(_)));
        let mut v = vocab();
        let unk = v.insert("<unk>");
        let lat = Lattice::read_text(&b"0 1 nope 1,1\n1 0\n"[..], &v, ReadOptions::default()).unwrap();
        assert_eq!(lat.arcs()[0].word, unk);
    }

    #[test]
    fn epsilon_requires_opt_in() {
        let src = b"0 1 <eps> 1,1\n1 0\n";
        assert!(Lattice::read_text(&src[..], &vocab(), ReadOptions::default()).is_err());
        let opts = ReadOptions {
            allow_epsilon: true,
            ..ReadOptions::default()
        };
        let lat = Lattice::read_text(&src[..], &vocab(), opts).unwrap();
        assert_eq!(lat.arcs()[0].word, EPSILON);
    }

    #[test]
    fn start_is_first_mentioned_state() {
        let lat = Lattice::read_text(&b"1 0 hello 0,0\n0 1\n"[..], &vocab(), ReadOptions::default()).unwrap();
        assert_eq!(lat.start(), 1);
        lat.validate().unwrap();
    }
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ctxrescore::eval::{cer, tag_token_ids, CerReport};
use ctxrescore::lattice::ReadOptions;
use ctxrescore::textprep::{tag_tokens, SidSide, WindowMode};
use ctxrescore::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{RescoreConfig, RunConfig};
use crate::{EvalArgs, RescoreArgs, SearchArgs, SynthArgs, TextprepArgs, TrainArgs};

pub fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

fn pick(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.clone())
        .ok_or_else(|| Error::Config(format!("--{name} is required (flag or config)")))
}

fn existing(p: PathBuf) -> Result<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::Config(format!("{} does not exist", p.display())))
    }
}

fn open(p: &Path) -> Result<BufReader<File>> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())).into())
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(p)
        .map(BufWriter::new)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())).into())
}

fn read_vocab(p: &Path) -> Result<Vocabulary> {
    Vocabulary::read(open(p)?)
}

fn read_arpa(p: &Path, vocab: &Vocabulary) -> Result<NgramModel> {
    NgramModel::load_arpa(open(p)?, vocab, ArpaOptions::default())
}

fn read_token_lines(p: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    let mut out = Vec::new();
    for line in open(p)?.lines() {
        let line = line?;
        let toks: Vec<TokenId> = line
            .split_whitespace()
            .map(|t| vocab.id_or_unk(t))
            .collect::<Result<_>>()?;
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}

fn load_lm(p: &Path, vocab: &Vocabulary) -> Result<AnyLm> {
    if p.extension().is_some_and(|e| e == "arpa") {
        Ok(AnyLm::Ngram(read_arpa(p, vocab)?))
    } else {
        Ok(AnyLm::Rnn(RnnLm::load_for_vocab(open(p)?, vocab)?))
    }
}

fn load_lattices(corpus: &DialogueCorpus, base: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<Lattice>>> {
    corpus
        .dialogues
        .iter()
        .map(|d| {
            d.utterances
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    let rel = u
                        .lattice_path
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("{} has no lattice_path", d.utterance_id(i))))?;
                    let path = base.join(rel);
                    Lattice::read_text(open(&path)?, vocab, ReadOptions::default())
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
                })
                .collect()
        })
        .collect()
}

fn lattice_base(flag: Option<PathBuf>, cfg: &RunConfig, conversations: &Path) -> PathBuf {
    flag.or_else(|| cfg.paths.lattice_dir.clone())
        .unwrap_or_else(|| conversations.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn search_options(a: &SearchArgs, c: &RescoreConfig) -> Result<(RescoreOptions, usize)> {
    let n = a.n.or(c.n).unwrap_or(4);
    let beam = a.beam.or(c.beam).unwrap_or(15.0);
    let lm_scale = a.lm_scale.or(c.lm_scale).unwrap_or(1.0);
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    if !(beam >= 0.0) {
        return Err(Error::Config(format!("beam must be >= 0, got {beam}")));
    }
    if !(lm_scale > 0.0) {
        return Err(Error::Config(format!("lm_scale must be > 0, got {lm_scale}")));
    }
    let mode = match a.mode.clone().or_else(|| c.mode.clone()).as_deref().unwrap_or("pruned") {
        "pruned" => RescoreMode::Pruned { n, beam },
        "approx" => RescoreMode::NgramApprox { n },
        "exact" => RescoreMode::Exact,
        other => return Err(Error::Config(format!("unknown mode {other:?} (pruned, approx, exact)"))),
    };
    let mut opts = RescoreOptions {
        lm_scale,
        mode,
        ..RescoreOptions::default()
    };
    if let Some(b) = a.budget.or(c.budget) {
        opts.budget = b;
    }
    Ok((opts, n))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

pub fn textprep(a: TextprepArgs, cfg: &RunConfig) -> Result<()> {
    let input = existing(a.input)?;
    let out_dir = pick(a.out_dir, &cfg.paths.out, "out-dir")?;
    let c = &cfg.textprep;
    let opts = ConcatOptions {
        k: a.k.or(c.k).unwrap_or(4),
        tag: a.tag.or(c.tag).unwrap_or(TagKind::Sp),
        mode: a.mode.or(c.mode).unwrap_or(WindowMode::Cyclic),
        sid_side: a.sid_side.or(c.sid_side).unwrap_or(SidSide::Earlier),
    };
    let corpus = DialogueCorpus::read_jsonl(open(&input)?)?;
    let seqs = build_concat_corpus(&corpus, &opts)?;
    std::fs::create_dir_all(&out_dir)?;
    let vocab = match a.vocab.or_else(|| cfg.paths.vocab.clone()) {
        Some(p) => read_vocab(&existing(p)?)?,
        None => {
            let tags = tag_tokens(&corpus, &[TagKind::Sp, TagKind::Sid, TagKind::Int]);
            let v = build_vocab(&corpus.sentences(), &tags);
            let mut w = create(&out_dir.join("vocab.txt"))?;
            v.write(&mut w)?;
            w.flush()?;
            v
        }
    };
    let mut w = create(&out_dir.join("text.txt"))?;
    let mut unknown = 0usize;
    let mut tokens = 0usize;
    for s in &seqs {
        tokens += s.len();
        unknown += s.iter().filter(|t| vocab.id(t).is_none()).count();
        writeln!(w, "{}", s.join(" "))?;
    }
    w.flush()?;
    if unknown > 0 {
        log::warn!("{unknown} tokens are not in the vocabulary");
    }
    #[derive(Serialize)]
    struct Summary {
        sequences: usize,
        tokens: usize,
        vocab_size: usize,
        unknown_tokens: usize,
    }
    print_json(&Summary {
        sequences: seqs.len(),
        tokens,
        vocab_size: vocab.len(),
        unknown_tokens: unknown,
    })
}

pub fn train(a: TrainArgs, cfg: &RunConfig, seed: Option<u64>) -> Result<()> {
    let vocab = read_vocab(&existing(pick(a.vocab, &cfg.paths.vocab, "vocab")?)?)?;
    let out = pick(a.out, &cfg.paths.model, "out")?;
    let corpus = read_token_lines(&existing(a.text)?, &vocab)?;
    let heldout = match a.heldout {
        Some(p) => Some(read_token_lines(&existing(p)?, &vocab)?),
        None => None,
    };
    let c = &cfg.train;
    let d = RnnLmConfig::default();
    let lm_cfg = RnnLmConfig {
        embedding_dim: a.embedding_dim.or(c.embedding_dim).unwrap_or(d.embedding_dim),
        hidden_dim: a.hidden_dim.or(c.hidden_dim).unwrap_or(d.hidden_dim),
        num_layers: a.layers.or(c.layers).unwrap_or(d.num_layers),
        cell: a.cell.or(c.cell).unwrap_or(d.cell),
        bptt: a.bptt.or(c.bptt).unwrap_or(d.bptt),
        learning_rate: a.learning_rate.or(c.learning_rate).unwrap_or(d.learning_rate),
        lr_decay: a.lr_decay.or(c.lr_decay).unwrap_or(d.lr_decay),
        epochs: a.epochs.or(c.epochs).unwrap_or(d.epochs),
        seed: seed.unwrap_or(d.seed),
        ..d
    };
    let mut lm = RnnLm::init(lm_cfg, &vocab)?;
    let report = lm.train(&corpus, heldout.as_deref())?;
    let mut w = create(&out)?;
    lm.save(&mut w)?;
    w.flush()?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".log.json");
        s.into()
    });
    let mut w = create(&log_path)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        model: String,
        parameters: usize,
        train_perplexity: f64,
        heldout_perplexity: Option<f64>,
    }
    print_json(&Summary {
        model: out.display().to_string(),
        parameters: lm.config().parameter_count(),
        train_perplexity: report.epochs.last().map_or(f64::NAN, |e| e.train_perplexity),
        heldout_perplexity: report.final_heldout_perplexity(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct HypLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    conv_id: String,
    utt_index: usize,
    hypothesis: String,
    #[serde(default)]
    similarity: Option<f64>,
    #[serde(default)]
    concatenated: bool,
    #[serde(default)]
    context_utterances: usize,
    #[serde(default)]
    cost: f64,
    #[serde(default, skip_deserializing)]
    stats: Option<RescoreStats>,
}

pub fn rescore(a: RescoreArgs, cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let conv_path = existing(pick(a.conversations, &p.conversations, "conversations")?)?;
    let vocab = read_vocab(&existing(pick(a.vocab, &p.vocab, "vocab")?)?)?;
    let first_pass = read_arpa(&existing(pick(a.first_pass, &p.first_pass, "first-pass")?)?, &vocab)?;
    let lm = load_lm(&existing(pick(a.model, &p.model, "model")?)?, &vocab)?;
    let out = pick(a.out, &p.out, "out")?;
    let (ropts, n) = search_options(&a.search, &cfg.rescore)?;
    let rc = &cfg.rescore;
    let tag = a.tag.or(rc.tag).unwrap_or(TagKind::None);
    let threshold = a.threshold.or(rc.threshold);
    let gate = if tag == TagKind::None {
        if threshold.is_some() {
            log::warn!("threshold ignored without a tag");
        }
        Gate::Never
    } else {
        Gate::from_threshold(threshold)
    };
    let corpus = DialogueCorpus::read_jsonl(open(&conv_path)?)?;
    let base = lattice_base(a.lattice_dir, cfg, &conv_path);
    let lattices = load_lattices(&corpus, &base, &vocab)?;
    let subtract = first_pass.with_boundary_tokens(tag_token_ids(&vocab));
    let diff = DifferenceLm::new(&subtract, &lm);
    let hyps: Vec<Vec<TokenId>> = lattices
        .iter()
        .flatten()
        .map(|l| Ok(l.best_path(ropts.lm_scale)?.words))
        .collect::<Result<_>>()?;
    let tfidf = fit_tfidf(&hyps)?;
    let opts = ContextOptions {
        policy: ConcatPolicy {
            tag,
            gate,
            depth: a.depth.or(rc.depth).unwrap_or(1),
        },
        rescore: ropts,
        n,
    };
    let results = rescore_conversations(&corpus.dialogues, &lattices, &diff, &vocab, Some(&tfidf), &opts)?;
    let mut w = create(&out)?;
    let mut total = RescoreStats::default();
    let (mut utts, mut concatenated) = (0, 0);
    for r in results.iter().flatten() {
        utts += 1;
        concatenated += usize::from(r.concatenated);
        total.composed_states += r.stats.composed_states;
        total.expanded += r.stats.expanded;
        total.reexpansions += r.stats.reexpansions;
        total.pruned += r.stats.pruned;
        total.output_states += r.stats.output_states;
        total.output_arcs += r.stats.output_arcs;
        let line = HypLine {
            condition: None,
            conv_id: r.conv_id.clone(),
            utt_index: r.utt_index,
            hypothesis: vocab.decode_line(&r.hypothesis),
            similarity: r.similarity,
            concatenated: r.concatenated,
            context_utterances: r.context_utterances,
            cost: r.cost,
            stats: Some(r.stats.clone()),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        utterances: usize,
        concatenated: usize,
        stats: RescoreStats,
    }
    print_json(&Summary {
        utterances: utts,
        concatenated,
        stats: total,
    })
}

#[derive(Debug, Serialize)]
struct HypScore {
    name: String,
    #[serde(flatten)]
    report: CerReport,
    cer: Option<f64>,
    missing: usize,
}

fn score_hyps(corpus: &DialogueCorpus, specs: &[String], out_dir: &Path) -> Result<()> {
    let refs: BTreeMap<(&str, usize), &[String]> = corpus
        .dialogues
        .iter()
        .flat_map(|d| d.utterances.iter().enumerate().map(move |(i, u)| ((d.id.as_str(), i), &u.words[..])))
        .collect();
    let mut rows = Vec::new();
    for spec in specs {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (
                Path::new(spec).file_stem().map_or(spec.clone(), |s| s.to_string_lossy().into_owned()),
                PathBuf::from(spec),
            ),
        };
        let path = existing(path)?;
        // a file may hold several conditions (as written by the grid)
        let mut by_cond: BTreeMap<String, BTreeMap<(String, usize), String>> = BTreeMap::new();
        for (i, line) in open(&path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let h: HypLine = serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            let key = match &h.condition {
                Some(c) => format!("{name}/{c}"),
                None => name.clone(),
            };
            by_cond.entry(key).or_default().insert((h.conv_id, h.utt_index), h.hypothesis);
        }
        for (cond, hyps) in by_cond {
            let mut report = CerReport::default();
            let mut missing = 0;
            for (&(conv, i), words) in &refs {
                match hyps.get(&(conv.to_string(), i)) {
                    Some(h) => {
                        let hw: Vec<String> = h.split_whitespace().map(str::to_string).collect();
                        report += cer(words, &hw);
                    }
                    None => {
                        missing += 1;
                        report += cer(words, &[] as &[String]);
                    }
                }
            }
            rows.push(HypScore {
                name: cond,
                cer: report.cer(),
                report,
                missing,
            });
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut w = create(&out_dir.join("cer_report.json"))?;
    serde_json::to_writer_pretty(&mut w, &rows)?;
    w.flush()?;
    let mut w = create(&out_dir.join("cer_report.tsv"))?;
    writeln!(w, "name\tsubstitutions\tinsertions\tdeletions\tref_len\tcer\tmissing")?;
    for r in &rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            r.report.substitutions,
            r.report.insertions,
            r.report.deletions,
            r.report.ref_len,
            r.cer.map_or("NA".to_string(), |c| format!("{c:.6}")),
            r.missing
        )?;
    }
    w.flush()?;
    for r in &rows {
        println!("{}\t{}", r.name, r.cer.map_or("NA".to_string(), |c| format!("{c:.6}")));
    }
    Ok(())
}

pub fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let conv_path = existing(pick(a.conversations, &p.conversations, "conversations")?)?;
    let out_dir = pick(a.out_dir, &p.out, "out-dir")?;
    let corpus = DialogueCorpus::read_jsonl(open(&conv_path)?)?;
    if a.models.is_empty() && a.hyps.is_empty() {
        return Err(Error::Config("give --hyps files to score or --model entries for the grid".into()));
    }
    if !a.hyps.is_empty() {
        score_hyps(&corpus, &a.hyps, &out_dir)?;
    }
    if a.models.is_empty() {
        return Ok(());
    }
    let vocab = read_vocab(&existing(pick(a.vocab, &p.vocab, "vocab")?)?)?;
    let first_pass = read_arpa(&existing(pick(a.first_pass, &p.first_pass, "first-pass")?)?, &vocab)?;
    let mut models = Vec::new();
    for spec in &a.models {
        let bad = || Error::Config(format!("model {spec:?} is not NAME=TAG:PATH"));
        let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
        let (tag, path) = rest.split_once(':').ok_or_else(bad)?;
        models.push(GridModel {
            name: name.to_string(),
            tag: tag.parse()?,
            lm: load_lm(&existing(PathBuf::from(path))?, &vocab)?,
        });
    }
    let (rescore, n) = search_options(&a.search, &cfg.rescore)?;
    let grid_cfg = GridConfig {
        rescore,
        n,
        thresholds: a.thresholds.unwrap_or_else(|| eval::THRESHOLDS.to_vec()),
        depth: a.depth.or(cfg.rescore.depth).unwrap_or(1),
    };
    let base = lattice_base(a.lattice_dir, cfg, &conv_path);
    let lattices = load_lattices(&corpus, &base, &vocab)?;
    let grid = run_grid(&corpus, &lattices, &vocab, &first_pass, &models, &grid_cfg)?;
    grid.write_all(&out_dir, &vocab)?;
    let mut out = std::io::stdout().lock();
    grid.write_tsv(&mut out)?;
    Ok(())
}

#[derive(Serialize)]
struct TwinLine<'a> {
    entity: &'a str,
    twin: &'a str,
}

pub fn synth(a: SynthArgs, cfg: &RunConfig, seed: Option<u64>) -> Result<()> {
    let out_dir = pick(a.out_dir, &cfg.paths.out, "out-dir")?;
    let mut sc = cfg.synth.clone();
    if let Some(v) = a.train {
        sc.train_dialogues = v;
    }
    if let Some(v) = a.dev {
        sc.dev_dialogues = v;
    }
    if let Some(v) = a.test {
        sc.test_dialogues = v;
    }
    if let Some(v) = a.repeat_prob {
        sc.entity_repeat_prob = v;
    }
    let seed = seed.unwrap_or(42);
    let data = generate_synthetic_conversations(seed, &sc)?;
    std::fs::create_dir_all(&out_dir)?;
    let used = RunConfig {
        seed: Some(seed),
        synth: sc,
        ..RunConfig::default()
    };
    std::fs::write(out_dir.join("config.toml"), used.to_toml()?)?;
    let mut w = create(&out_dir.join("vocab.txt"))?;
    data.vocab.write(&mut w)?;
    w.flush()?;
    let mut w = create(&out_dir.join("first_pass.arpa"))?;
    data.first_pass.write_arpa(&mut w, &data.vocab)?;
    w.flush()?;
    let mut w = create(&out_dir.join("train.jsonl"))?;
    data.train.write_jsonl(&mut w)?;
    w.flush()?;
    for (split, corpus, lattices) in [
        ("dev", &data.dev, &data.dev_lattices),
        ("test", &data.test, &data.test_lattices),
    ] {
        let mut corpus = corpus.clone();
        for (d, lats) in corpus.dialogues.iter_mut().zip(lattices) {
            for (i, (u, l)) in d.utterances.iter_mut().zip(lats).enumerate() {
                let rel = format!("lattices/{split}/{}_{i}.lat", d.id);
                let mut w = create(&out_dir.join(&rel))?;
                l.write_text(&mut w, &data.vocab)?;
                w.flush()?;
                u.lattice_path = Some(rel);
            }
        }
        let mut w = create(&out_dir.join(format!("{split}.jsonl")))?;
        corpus.write_jsonl(&mut w)?;
        w.flush()?;
    }
    let mut w = create(&out_dir.join("entities.jsonl"))?;
    for (e, t) in &data.twins {
        serde_json::to_writer(&mut w, &TwinLine { entity: e, twin: t })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        vocab_size: usize,
        train: usize,
        dev: usize,
        test: usize,
        test_utterances: usize,
    }
    print_json(&Summary {
        vocab_size: data.vocab.len(),
        train: data.train.dialogues.len(),
        dev: data.dev.dialogues.len(),
        test: data.test.dialogues.len(),
        test_utterances: data.test.num_utterances(),
    })
}

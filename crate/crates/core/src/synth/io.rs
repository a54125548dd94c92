//! Line-delimited dataset files.
//!
//! Each file starts with one header line:
//!
//! ```text
//! # vislab-corpus v1 world=<16 hex> seed=<u64> n=<count> generator=<ver> rates=<a>:<c>:<hits>/<anchors>,...
//! # vislab-probes v1 world=<16 hex> seed=<u64> n=<count> generator=<ver> flavor=<pope|mmvp_pairs|merlin_edit|qa>
//! ```
//!
//! followed by one record per line:
//!
//! ```text
//! scene=<slot:type:attr,...|-> caption=<id,id,...>
//! scene=<slot:type:attr,...|-> q=<id,id,...> answer=<yes|no> kind=<kind> pair=<u64|-> edit=<original|edited|->
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::Answer;

use super::probes::{CaptionRecord, CompanionRate, Corpus, EditTag, Flavor, ProbeRecord, ProbeSet};
use super::world::{Scene, WorldSpec, GENERATOR_VERSION};

const CORPUS_MAGIC: &str = "# vislab-corpus v1";
const PROBES_MAGIC: &str = "# vislab-probes v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub world_hash: u64,
    pub seed: u64,
    pub n: usize,
    pub generator: u32,
    pub fields: BTreeMap<String, String>,
}

fn ids(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_ids(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::Data(format!("bad token id {x:?}"))))
        .collect()
}

fn fields(line: &str) -> Result<BTreeMap<&str, &str>> {
    line.split_whitespace()
        .map(|f| {
            f.split_once('=')
                .ok_or_else(|| Error::Data(format!("expected key=value, got {f:?}")))
        })
        .collect()
}

fn parse_header(line: &str, magic: &str) -> Result<Header> {
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| Error::Data(format!("missing header {magic:?}")))?;
    let map = fields(rest)?;
    let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Data(format!("header lacks {k}")));
    let world_hash =
        u64::from_str_radix(get("world")?, 16).map_err(|_| Error::Data("bad world hash".into()))?;
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Data(format!("bad header {k}"))) };
    Ok(Header {
        world_hash,
        seed: num("seed")?,
        n: num("n")? as usize,
        generator: num("generator")? as u32,
        fields: map.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    })
}

pub fn corpus_to_string(spec: &WorldSpec, corpus: &Corpus) -> String {
    let rates: Vec<String> = corpus
        .rates
        .iter()
        .map(|r| format!("{}:{}:{}/{}", r.anchor, r.companion, r.with_companion, r.anchor_scenes))
        .collect();
    let mut s = format!(
        "{CORPUS_MAGIC} world={:016x} seed={} n={} generator={GENERATOR_VERSION} rates={}\n",
        spec.hash(),
        corpus.seed,
        corpus.records.len(),
        if rates.is_empty() { "-".into() } else { rates.join(",") }
    );
    for r in &corpus.records {
        let _ = writeln!(s, "scene={} caption={}", r.scene.serialize(), ids(&r.caption));
    }
    s
}

pub fn probes_to_string(spec: &WorldSpec, set: &ProbeSet) -> String {
    let mut s = format!(
        "{PROBES_MAGIC} world={:016x} seed={} n={} generator={GENERATOR_VERSION} flavor={}\n",
        spec.hash(),
        set.seed,
        set.records.len(),
        set.flavor
    );
    for r in &set.records {
        let _ = writeln!(
            s,
            "scene={} q={} answer={} kind={} pair={} edit={}",
            r.scene.serialize(),
            ids(&r.question),
            r.answer.as_str(),
            r.kind.as_str(),
            r.pair_id.map_or("-".into(), |p| p.to_string()),
            r.edit.map_or("-", EditTag::as_str)
        );
    }
    s
}

fn check_world(header: &Header, spec: &WorldSpec) -> Result<()> {
    if header.world_hash != spec.hash() {
        return Err(Error::HashMismatch(format!(
            "file was generated for world {:016x}, but the loaded world is {:016x}",
            header.world_hash,
            spec.hash()
        )));
    }
    Ok(())
}

pub fn parse_corpus(text: &str, spec: &WorldSpec) -> Result<(Header, Corpus)> {
    let mut lines = text.lines();
    let header = parse_header(lines.next().unwrap_or(""), CORPUS_MAGIC)?;
    check_world(&header, spec)?;
    let mut records = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f = fields(line)?;
        let scene = Scene::parse(f.get("scene").ok_or_else(|| Error::Data("record lacks scene".into()))?, spec)?;
        let caption = parse_ids(f.get("caption").ok_or_else(|| Error::Data("record lacks caption".into()))?)?;
        records.push(CaptionRecord { scene, caption });
    }
    if records.len() != header.n {
        return Err(Error::Data(format!("header says {} records, found {}", header.n, records.len())));
    }
    let mut rates = Vec::new();
    if let Some(r) = header.fields.get("rates").filter(|r| r.as_str() != "-") {
        for item in r.split(',') {
            let bad = || Error::Data(format!("bad rate entry {item:?}"));
            let (pair, frac) = item.rsplit_once(':').ok_or_else(bad)?;
            let (a, c) = pair.split_once(':').ok_or_else(bad)?;
            let (hits, total) = frac.split_once('/').ok_or_else(bad)?;
            rates.push(CompanionRate {
                anchor: a.parse().map_err(|_| bad())?,
                companion: c.parse().map_err(|_| bad())?,
                with_companion: hits.parse().map_err(|_| bad())?,
                anchor_scenes: total.parse().map_err(|_| bad())?,
            });
        }
    }
    let seed = header.seed;
    Ok((header, Corpus { seed, records, rates }))
}

pub fn parse_probes(text: &str, spec: &WorldSpec) -> Result<(Header, ProbeSet)> {
    let mut lines = text.lines();
    let header = parse_header(lines.next().unwrap_or(""), PROBES_MAGIC)?;
    check_world(&header, spec)?;
    let flavor: Flavor = header
        .fields
        .get("flavor")
        .ok_or_else(|| Error::Data("header lacks flavor".into()))?
        .parse()?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f = fields(line)?;
        let get = |k: &str| {
            f.get(k)
                .copied()
                .ok_or_else(|| Error::Data(format!("record {} lacks {k}", i + 1)))
        };
        let answer = match get("answer")? {
            "yes" => Answer::Yes,
            "no" => Answer::No,
            a => return Err(Error::Data(format!("bad answer {a:?}"))),
        };
        let pair_id = match get("pair")? {
            "-" => None,
            p => Some(p.parse().map_err(|_| Error::Data(format!("bad pair id {p:?}")))?),
        };
        let edit = match get("edit")? {
            "-" => None,
            "original" => Some(EditTag::Original),
            "edited" => Some(EditTag::Edited),
            e => return Err(Error::Data(format!("bad edit tag {e:?}"))),
        };
        records.push(ProbeRecord {
            scene: Scene::parse(get("scene")?, spec)?,
            question: parse_ids(get("q")?)?,
            answer,
            kind: get("kind")?.parse()?,
            pair_id,
            edit,
        });
    }
    if records.len() != header.n {
        return Err(Error::Data(format!("header says {} records, found {}", header.n, records.len())));
    }
    let seed = header.seed;
    Ok((header, ProbeSet { flavor, seed, records }))
}

pub fn write_world(path: &Path, spec: &WorldSpec) -> Result<()> {
    fsutil::write_atomic(path, spec.canonical().as_bytes())
}

pub fn read_world(path: &Path) -> Result<WorldSpec> {
    WorldSpec::parse(&fsutil::read_string(path)?)
}

pub fn write_corpus(path: &Path, spec: &WorldSpec, corpus: &Corpus) -> Result<()> {
    fsutil::write_atomic(path, corpus_to_string(spec, corpus).as_bytes())
}

pub fn read_corpus(path: &Path, spec: &WorldSpec) -> Result<Corpus> {
    Ok(parse_corpus(&fsutil::read_string(path)?, spec)?.1)
}

pub fn write_probes(path: &Path, spec: &WorldSpec, set: &ProbeSet) -> Result<()> {
    fsutil::write_atomic(path, probes_to_string(spec, set).as_bytes())
}

pub fn read_probes(path: &Path, spec: &WorldSpec) -> Result<ProbeSet> {
    Ok(parse_probes(&fsutil::read_string(path)?, spec)?.1)
}

//! File formats.
//!
//! - datasets: one JSON object per line, `{"id", "phi_a", "phi_b", "p", "n"}`;
//! - ensembles: `{"dim", "k", "models": [{"alpha", "theta"}]}`;
//! - tournament graphs: `{"m", "p"}` with pairs in lexicographic `(i, j), i < j` order;
//! - ranking distributions: `{"m", "support": [{"ranking", "probability"}]}`;
//! - prompt candidates: one JSON object per line, `{"prompt_id", "candidates"}`.
//!
//! Reals are written in shortest round-trip form, so parsing a written file reproduces
//! every value bit-for-bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::diversity::PromptCandidates;
use crate::error::{Error, Result};
use crate::model::{
    ComparisonTriple, Embedding, Ensemble, LinearRewardModel, PreferenceDataset, PreferenceRecord,
};
use crate::tournament::{Ranking, RankingDistribution, TournamentGraph};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    phi_a: Vec<f64>,
    phi_b: Vec<f64>,
    p: f64,
    n: u32,
}

fn parse_record(line: &str) -> Result<PreferenceRecord> {
    let raw: RecordLine =
        serde_json::from_str(line).map_err(|e| Error::InvalidData(e.to_string()))?;
    let triple = ComparisonTriple::new(
        raw.id,
        Embedding::new(raw.phi_a)?,
        Embedding::new(raw.phi_b)?,
    )?;
    PreferenceRecord::new(triple, raw.p, raw.n)
}

/// Reads a line-delimited dataset. Errors name the 1-based line. Blank lines are skipped.
pub fn read_dataset(reader: impl BufRead) -> Result<PreferenceDataset> {
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let d = *dim.get_or_insert(rec.triple.dim());
        if d != rec.triple.dim() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("embedding dimension {} differs from {d}", rec.triple.dim()),
            });
        }
        records.push(rec);
    }
    let dim = dim.ok_or_else(|| Error::InvalidData("dataset has no records".into()))?;
    PreferenceDataset::new(dim, records)
}

pub fn write_dataset(mut w: impl Write, ds: &PreferenceDataset) -> Result<()> {
    for r in ds.records() {
        let line = RecordLine {
            id: r.triple.id.clone(),
            phi_a: r.triple.phi_a().as_slice().to_vec(),
            phi_b: r.triple.phi_b().as_slice().to_vec(),
            p: r.p,
            n: r.n,
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    alpha: f64,
    theta: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleFile {
    dim: usize,
    k: usize,
    models: Vec<ModelEntry>,
}

pub fn ensemble_to_json(ens: &Ensemble) -> String {
    let file = EnsembleFile {
        dim: ens.dim(),
        k: ens.len(),
        models: ens
            .models()
            .iter()
            .zip(ens.weights())
            .map(|(m, &alpha)| ModelEntry {
                alpha,
                theta: m.theta().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("ensemble serializes") + "\n"
}

pub fn ensemble_from_json(s: &str) -> Result<Ensemble> {
    let file: EnsembleFile =
        serde_json::from_str(s).map_err(|e| Error::InvalidData(e.to_string()))?;
    if file.k != file.models.len() {
        return Err(Error::InvalidData(format!(
            "header says k = {} but {} models follow",
            file.k,
            file.models.len()
        )));
    }
    let mut models = Vec::with_capacity(file.k);
    let mut weights = Vec::with_capacity(file.k);
    for m in file.models {
        Error::check_dim(file.dim, m.theta.len())?;
        models.push(LinearRewardModel::new(m.theta)?);
        weights.push(m.alpha);
    }
    Ensemble::new(models, weights)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    m: usize,
    p: Vec<f64>,
}

pub fn graph_to_json(g: &TournamentGraph) -> String {
    serde_json::to_string_pretty(&GraphFile {
        m: g.m(),
        p: g.entries().to_vec(),
    })
    .expect("graph serializes")
        + "\n"
}

pub fn graph_from_json(s: &str) -> Result<TournamentGraph> {
    let file: GraphFile = serde_json::from_str(s).map_err(|e| Error::InvalidData(e.to_string()))?;
    TournamentGraph::new(file.m, file.p)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportEntry {
    ranking: Vec<usize>,
    probability: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    m: usize,
    support: Vec<SupportEntry>,
}

pub fn distribution_to_value(d: &RankingDistribution) -> serde_json::Value {
    serde_json::to_value(DistributionFile {
        m: d.m(),
        support: d
            .support()
            .iter()
            .map(|(r, w)| SupportEntry {
                ranking: r.order().to_vec(),
                probability: *w,
            })
            .collect(),
    })
    .expect("distribution serializes")
}

pub fn distribution_to_json(d: &RankingDistribution) -> String {
    serde_json::to_string_pretty(&distribution_to_value(d)).expect("distribution serializes") + "\n"
}

pub fn distribution_from_json(s: &str) -> Result<RankingDistribution> {
    let file: DistributionFile =
        serde_json::from_str(s).map_err(|e| Error::InvalidData(e.to_string()))?;
    let support = file
        .support
        .into_iter()
        .map(|e| {
            Error::check_dim(file.m, e.ranking.len())?;
            Ok((Ranking::new(e.ranking)?, e.probability))
        })
        .collect::<Result<Vec<_>>>()?;
    RankingDistribution::new(support)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptLine {
    prompt_id: String,
    candidates: Vec<Vec<f64>>,
}

pub fn read_prompt_candidates(reader: impl BufRead) -> Result<Vec<PromptCandidates>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let wrap = |e: Error| Error::Parse {
            line: lineno,
            message: e.to_string(),
        };
        let line = line.map_err(|e| wrap(e.into()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PromptLine =
            serde_json::from_str(&line).map_err(|e| wrap(Error::InvalidData(e.to_string())))?;
        let cands = raw
            .candidates
            .into_iter()
            .map(Embedding::new)
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;
        out.push(PromptCandidates::new(raw.prompt_id, cands).map_err(wrap)?);
    }
    Ok(out)
}

pub fn write_prompt_candidates(mut w: impl Write, prompts: &[PromptCandidates]) -> Result<()> {
    for pc in prompts {
        let line = PromptLine {
            prompt_id: pc.prompt_id.clone(),
            candidates: pc
                .candidates()
                .iter()
                .map(|c| c.as_slice().to_vec())
                .collect(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dataset() -> PreferenceDataset {
        let t = ComparisonTriple::new(
            "a",
            Embedding::new(vec![0.1, -2.5]).unwrap(),
            Embedding::new(vec![1.0 / 3.0, 7.0]).unwrap(),
        )
        .unwrap();
        PreferenceDataset::new(2, vec![PreferenceRecord::new(t, 0.75, 4).unwrap()]).unwrap()
    }

    #[test]
    fn dataset_parse_errors_name_the_line() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &small_dataset()).unwrap();
        let good = String::from_utf8(buf).unwrap();
        let text = format!(
            "{good}{{\"id\": \"b\", \"phi_a\": [1, 2], \"phi_b\": [1, 2], \"p\": 1, \"n\": 1}}\n"
        );
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_dataset("not json\n".as_bytes()) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ensemble_rejects_bad_header() {
        let s = r#"{"dim": 1, "k": 2, "models": [{"alpha": 1.0, "theta": [1.0]}]}"#;
        assert!(ensemble_from_json(s).is_err());
        let s = r#"{"dim": 2, "k": 1, "models": [{"alpha": 1.0, "theta": [1.0]}]}"#;
        assert!(ensemble_from_json(s).is_err());
        let s = r#"{"dim": 1, "k": 1, "models": [{"alpha": 1.0, "theta": [1.0]}], "x": 0}"#;
        assert!(ensemble_from_json(s).is_err());
    }

    #[test]
    fn graph_and_distribution_parse() {
        let g = graph_from_json(r#"{"m": 3, "p": [1.0, 0.0, 1.0]}"#).unwrap();
        assert_eq!(g.m(), 3);
        assert!(graph_from_json(r#"{"m": 3, "p": [1.0]}"#).is_err());
        let d = distribution_from_json(
            r#"{"m": 3, "support": [{"ranking": [0,1,2], "probability": 0.5}, {"ranking": [2,1,0], "probability": 0.5}]}"#,
        )
        .unwrap();
        assert_eq!(d.support().len(), 2);
    }
}

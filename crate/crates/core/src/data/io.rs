//! File formats: line-delimited JSON for token datasets (header line first)
//! and CSV for synthetic tabular data (seed in a leading comment line).

use super::{
    DatasetSplit, LabeledExample, MetricKind, SyntheticTabularExample, TokenSequence, Vocabulary, FEATURE_DIM,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};

pub const DATASET_FORMAT: &str = "faithkit-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    labels: Vec<String>,
    metric: MetricKind,
    vocab: Vec<String>,
    #[serde(default)]
    signal_tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    split: String,
    id: usize,
    tokens: Vec<String>,
    gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masked: Option<Vec<bool>>,
}

pub fn write_dataset<W: Write>(split: &DatasetSplit, mut w: W) -> Result<()> {
    let name = |id: usize| split.vocab.token(id).unwrap_or("").to_string();
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: split.seed,
        labels: split.labels.clone(),
        metric: split.metric,
        vocab: split.vocab.tokens().to_vec(),
        signal_tokens: split.signal_tokens.iter().map(|&t| name(t)).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for (tag, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        for ex in part {
            let masked = ex.sequence.mask_flags();
            let rec = Record {
                split: tag.into(),
                id: ex.id,
                tokens: ex.sequence.tokens().iter().map(|&t| name(t)).collect(),
                gold: split.labels[ex.gold].clone(),
                masked: masked.iter().any(|&m| m).then(|| masked.to_vec()),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<DatasetSplit> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(Error::EmptyDataset("dataset file has no header"))??;
    let header: Header = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset format {} v{}", header.format, header.version)));
    }
    let vocab = Vocabulary::from_tokens(header.vocab)?;
    let lookup = |t: &str| vocab.id(t).ok_or_else(|| Error::Format(format!("token {t:?} not in vocabulary")));
    let signal_tokens = header.signal_tokens.iter().map(|t| lookup(t)).collect::<Result<_>>()?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        labels: header.labels,
        metric: header.metric,
        vocab: vocab.clone(),
        seed: header.seed,
        signal_tokens,
    };
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)?;
        let tokens = rec.tokens.iter().map(|t| lookup(t)).collect::<Result<Vec<_>>>()?;
        let sequence = match rec.masked {
            Some(m) => TokenSequence::with_mask(tokens, m)?,
            None => TokenSequence::new(tokens),
        };
        let gold = split
            .labels
            .iter()
            .position(|l| *l == rec.gold)
            .ok_or_else(|| Error::Format(format!("label {:?} not in label set", rec.gold)))?;
        let ex = LabeledExample { id: rec.id, sequence, gold };
        match rec.split.as_str() {
            "train" => split.train.push(ex),
            "validation" => split.validation.push(ex),
            "test" => split.test.push(ex),
            other => return Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
    Ok(split)
}

pub fn write_synthetic_csv<W: Write>(data: &[SyntheticTabularExample], seed: u64, mut w: W) -> Result<()> {
    writeln!(w, "# seed={seed}")?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..FEATURE_DIM).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    out.write_record(&header).map_err(csv_err)?;
    for ex in data {
        let mut row: Vec<String> = ex.x.iter().map(|v| format!("{v:?}")).collect();
        row.push(u8::from(ex.y).to_string());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Returns the examples and the seed from the header comment, if present.
pub fn read_synthetic_csv<R: std::io::Read>(r: R) -> Result<(Vec<SyntheticTabularExample>, Option<u64>)> {
    let mut text = String::new();
    std::io::BufReader::new(r).read_to_string(&mut text)?;
    let mut seed = None;
    let mut body = text.as_str();
    if let Some(rest) = body.strip_prefix("# seed=") {
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        seed = Some(line.trim().parse().map_err(|_| Error::Format("bad seed comment".into()))?);
        body = tail;
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        if row.len() != FEATURE_DIM + 1 {
            return Err(Error::Dimension(format!("expected {} columns, got {}", FEATURE_DIM + 1, row.len())));
        }
        let mut x = [0.0; FEATURE_DIM];
        for (j, v) in x.iter_mut().enumerate() {
            *v = row[j].parse().map_err(|_| Error::Format(format!("bad number {:?}", &row[j])))?;
        }
        let y = match &row[FEATURE_DIM] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Format(format!("bad label {other:?}"))),
        };
        out.push(SyntheticTabularExample { x, y, z: None });
    }
    Ok((out, seed))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_keyword_sentiment, gen_synthetic};

    #[test]
    fn dataset_round_trip() {
        let mut split = gen_keyword_sentiment(20, 5, 4).unwrap();
        split.test[0].sequence.mask(2);
        let mut buf = Vec::new();
        write_dataset(&split, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).lines().next().unwrap().contains("\"seed\":4"));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.train, split.train);
        assert_eq!(back.test, split.test);
        assert_eq!(back.vocab, split.vocab);
        assert_eq!(back.signal_tokens, split.signal_tokens);
    }

    #[test]
    fn csv_round_trip() {
        let data = gen_synthetic(5, 8).unwrap();
        let mut buf = Vec::new();
        write_synthetic_csv(&data, 8, &mut buf).unwrap();
        let (back, seed) = read_synthetic_csv(buf.as_slice()).unwrap();
        assert_eq!(seed, Some(8));
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
    }
}

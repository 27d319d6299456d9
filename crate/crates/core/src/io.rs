//! On-disk artifacts: metrics, embeddings, reports and plans as CSV, encoder
//! weights as a small binary format.
//!
//! Weights layout, all little-endian:
//!
//! ```text
//! b"MOVR"  version:u8  k:u32  d:u32  d_in:u32  k·d·d_in × f64 (row-major per encoder)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{AblationReport, CrossModalReport, RetrievalResult};
use crate::linalg::Matrix;
use crate::model::{EmbeddingSet, LinearEncoder};
use crate::objective::LossBreakdown;
use crate::transport::TransportPlan;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const CROSSMODAL_FILE: &str = "crossmodal.csv";
pub const RECALL_FILE: &str = "recall.csv";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CONFIG_FILE: &str = "config.txt";

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MOVR";
pub const WEIGHTS_VERSION: u8 = 1;

pub fn metrics_csv(history: &[LossBreakdown]) -> String {
    let mut s = String::from(
        "# mover metrics v1\nstep,mover_loss,contrastive_loss,total,group_count,mean_pos_volume,mean_neg_volume\n",
    );
    for (step, b) in history.iter().enumerate() {
        writeln!(
            s,
            "{step},{},{},{},{},{},{}",
            b.mover_loss, b.contrastive_loss, b.total, b.group_count, b.mean_pos_volume, b.mean_neg_volume
        )
        .unwrap();
    }
    s
}

/// One row per sample: modality (1-based), index, label, then the vector.
pub fn embeddings_csv(embeddings: &[EmbeddingSet], labels: &[usize]) -> String {
    let d = embeddings.first().map_or(0, EmbeddingSet::dim);
    let mut s = String::from("# mover embeddings v1\nmodality,index,label");
    for j in 0..d {
        write!(s, ",e{j}").unwrap();
    }
    s.push('\n');
    for e in embeddings {
        for i in 0..e.len() {
            write!(s, "{},{},{}", e.modality() + 1, i, labels[i]).unwrap();
            for x in e.row(i) {
                write!(s, ",{x}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

fn retrieval_rows(s: &mut String, prefix: &str, results: &[RetrievalResult]) {
    for r in results {
        for (k, v) in &r.recall_at {
            writeln!(s, "{prefix},{},{k},{v}", r.direction()).unwrap();
        }
    }
}

pub fn recall_csv(results: &[RetrievalResult]) -> String {
    let mut s = String::from("# mover recall v1\ndirection,k,recall\n");
    for r in results {
        for (k, v) in &r.recall_at {
            writeln!(s, "{},{k},{v}", r.direction()).unwrap();
        }
    }
    s
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut s = String::from("# mover ablation v1\nvariant,seed,direction,k,recall\n");
    for run in &report.runs {
        retrieval_rows(&mut s, &format!("{},{}", run.variant, run.seed), &run.results);
    }
    s
}

pub fn crossmodal_csv(report: &CrossModalReport) -> String {
    let mut s = String::from("# mover crossmodal v1\nvariant,seed,direction,k,recall\n");
    for run in &report.runs {
        retrieval_rows(&mut s, &format!("restricted,{}", run.seed), &run.restricted);
        retrieval_rows(&mut s, &format!("oracle,{}", run.seed), &run.oracle);
    }
    s
}

/// Dense plan, one CSV row per source sample.
pub fn plan_csv(plan: &TransportPlan) -> String {
    let mut s = format!(
        "# mover plan v1 source={} target={} epsilon={} iterations={} marginal_error={}\n",
        plan.source_modality + 1,
        plan.target_modality + 1,
        plan.epsilon,
        plan.iterations,
        plan.marginal_error
    );
    for i in 0..plan.rows() {
        let row: Vec<String> = plan.row(i).iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn encode_weights(encoders: &[LinearEncoder]) -> Result<Vec<u8>> {
    let first = encoders
        .first()
        .ok_or_else(|| Error::Format("no encoders to save".into()))?;
    let (d, d_in) = (first.output_dim(), first.input_dim());
    if let Some(e) = encoders.iter().find(|e| (e.output_dim(), e.input_dim()) != (d, d_in)) {
        return Err(Error::Format(format!(
            "encoder {} is {}x{}, expected {d}x{d_in}",
            e.modality,
            e.output_dim(),
            e.input_dim()
        )));
    }
    let mut out = Vec::with_capacity(17 + 8 * encoders.len() * d * d_in);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(WEIGHTS_VERSION);
    for n in [encoders.len(), d, d_in] {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} too large")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    for e in encoders {
        for x in e.weight.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<LinearEncoder>> {
    if bytes.len() < 17 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("missing MOVR header".into()));
    }
    if bytes[4] != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (k, d, d_in) = (word(5), word(9), word(13));
    let expected = 17 + 8 * k * d * d_in;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {k} encoders of {d}x{d_in}, found {}",
            bytes.len()
        )));
    }
    let mut floats = bytes[17..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    (0..k)
        .map(|m| {
            let data: Vec<f64> = floats.by_ref().take(d * d_in).collect();
            LinearEncoder::new(Matrix::from_vec(d, d_in, data), m)
        })
        .collect()
}

pub fn save_weights(path: &Path, encoders: &[LinearEncoder]) -> Result<()> {
    fs::write(path, encode_weights(encoders)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Vec<LinearEncoder>> {
    decode_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_encoders;
    use proptest::prelude::*;

    #[test]
    fn metrics_header_and_rows() {
        let b = LossBreakdown {
            mover_loss: 0.5,
            contrastive_loss: 1.25,
            total: 1.75,
            group_count: 9,
            mean_pos_volume: 0.1,
            mean_neg_volume: 0.9,
        };
        let csv = metrics_csv(&[b, b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# mover metrics v1");
        assert_eq!(lines[2], "0,0.5,1.25,1.75,9,0.1,0.9");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn weights_reject_corruption() {
        let bytes = encode_weights(&init_encoders(2, 3, 4, 0)).unwrap();
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(decode_weights(&bad).is_err());
    }

    proptest! {
        #[test]
        fn weights_round_trip_bit_exact(seed in any::<u64>(), k in 1usize..4, d in 1usize..6, d_in in 1usize..6) {
            let enc = init_encoders(k, d, d_in, seed);
            let back = decode_weights(&encode_weights(&enc).unwrap()).unwrap();
            prop_assert_eq!(back, enc);
        }
    }
}

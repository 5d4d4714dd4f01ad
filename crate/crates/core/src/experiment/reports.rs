//! CSV emission: learning curves, final metrics, and the comparison table
//! that places a run beside the published MovieLens reference rows.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::DatasetFormat;
use crate::error::Result;
use crate::evaluation::{LearningCurve, MetricsReport};

/// Published MovieLens comparison rows carried as reference constants,
/// ordered (N@5, N@20, P@5, P@20, R@5, R@20).
pub type ReferenceRow = (&'static str, [f64; 6]);

pub const REFERENCE_ML100K: [ReferenceRow; 9] = [
    ("ItemPop", [0.163, 0.195, 0.181, 0.138, 0.102, 0.251]),
    ("BPR", [0.370, 0.380, 0.348, 0.236, 0.116, 0.287]),
    ("FISM", [0.444, 0.436, 0.426, 0.281, 0.139, 0.342]),
    ("CDAE", [0.450, 0.436, 0.433, 0.288, 0.141, 0.358]),
    ("GraphGAN", [0.183, 0.249, 0.212, 0.151, 0.102, 0.260]),
    ("IRGAN", [0.342, 0.368, 0.312, 0.221, 0.107, 0.275]),
    ("CFGAN", [0.480, 0.441, 0.441, 0.302, 0.161, 0.361]),
    ("CFWGAN-GP", [0.461, 0.430, 0.423, 0.285, 0.148, 0.359]),
    ("MLC", [0.486, 0.448, 0.450, 0.300, 0.156, 0.365]),
];

pub const REFERENCE_ML1M: [ReferenceRow; 9] = [
    ("ItemPop", [0.154, 0.181, 0.157, 0.121, 0.076, 0.197]),
    ("BPR", [0.349, 0.362, 0.341, 0.252, 0.077, 0.208]),
    ("FISM", [0.427, 0.401, 0.408, 0.292, 0.098, 0.263]),
    ("CDAE", [0.441, 0.411, 0.411, 0.300, 0.102, 0.278]),
    ("GraphGAN", [0.205, 0.184, 0.178, 0.194, 0.070, 0.179]),
    ("IRGAN", [0.264, 0.246, 0.263, 0.214, 0.072, 0.166]),
    ("CFGAN", [0.442, 0.411, 0.423, 0.317, 0.110, 0.285]),
    ("CFWGAN-GP", [0.437, 0.390, 0.414, 0.296, 0.104, 0.260]),
    ("MLC", [0.472, 0.419, 0.446, 0.317, 0.111, 0.280]),
];

pub fn reference_rows(format: DatasetFormat) -> &'static [ReferenceRow; 9] {
    match format {
        DatasetFormat::Ml100k => &REFERENCE_ML100K,
        DatasetFormat::Ml1m => &REFERENCE_ML1M,
    }
}

pub fn reference_metric(
    format: DatasetFormat,
    model: &str,
    metric: &str,
) -> Option<f64> {
    let idx = match metric {
        "N5" => 0,
        "N20" => 1,
        "P5" => 2,
        "P20" => 3,
        "R5" => 4,
        "R20" => 5,
        _ => return None,
    };
    reference_rows(format)
        .iter()
        .find(|(name, _)| *name == model)
        .map(|(_, row)| row[idx])
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn curve_csv(curve: &LearningCurve) -> String {
    let mut s = String::from("epoch,split,P5,P20,R5,R20,N5,N20\n");
    for row in curve.rows() {
        let r = &row.report;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            row.epoch,
            row.split.name(),
            fmt6(r.p5),
            fmt6(r.p20),
            fmt6(r.r5),
            fmt6(r.r20),
            fmt6(r.n5),
            fmt6(r.n20)
        )
        .unwrap();
    }
    s
}

pub fn final_csv(model: &str, seed: u64, report: &MetricsReport) -> String {
    let mut s = String::from("model,seed,P5,P20,R5,R20,N5,N20\n");
    writeln!(
        s,
        "{},{},{},{},{},{},{},{}",
        model,
        seed,
        fmt6(report.p5),
        fmt6(report.p20),
        fmt6(report.r5),
        fmt6(report.r20),
        fmt6(report.n5),
        fmt6(report.n20)
    )
    .unwrap();
    s
}

/// This run's metrics beside the published rows, in the published metric
/// order.
pub fn comparison_csv(
    format: DatasetFormat,
    run_label: &str,
    report: &MetricsReport,
) -> String {
    let mut s = String::from("model,dataset,source,N5,N20,P5,P20,R5,R20\n");
    let dataset = format.name();
    for (name, row) in reference_rows(format) {
        writeln!(
            s,
            "{name},{dataset},published,{},{},{},{},{},{}",
            fmt6(row[0]),
            fmt6(row[1]),
            fmt6(row[2]),
            fmt6(row[3]),
            fmt6(row[4]),
            fmt6(row[5])
        )
        .unwrap();
    }
    writeln!(
        s,
        "{run_label},{dataset},this-run,{},{},{},{},{},{}",
        fmt6(report.n5),
        fmt6(report.n20),
        fmt6(report.p5),
        fmt6(report.p20),
        fmt6(report.r5),
        fmt6(report.r20)
    )
    .unwrap();
    s
}

pub fn emit_reports(
    out_dir: &Path,
    format: DatasetFormat,
    model_label: &str,
    seed: u64,
    curve: &LearningCurve,
    final_report: &MetricsReport,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("curve.csv"), curve_csv(curve))?;
    std::fs::write(
        out_dir.join("final.csv"),
        final_csv(model_label, seed, final_report),
    )?;
    std::fs::write(
        out_dir.join("comparison.csv"),
        comparison_csv(format, model_label, final_report),
    )?;
    Ok(())
}

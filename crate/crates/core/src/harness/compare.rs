//! Side-by-side metric tables of two run reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::{RunReport, VariantRun};

/// One comparison line; `seed` is `None` for seed means and `epoch` is
/// `None` for the final metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant_a: String,
    pub variant_b: String,
    pub seed: Option<u64>,
    pub epoch: Option<usize>,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    /// `variant_a,variant_b,seed,epoch,a,b,delta` with `mean` and `final`
    /// standing in for missing seed and epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant_a,variant_b,seed,epoch,a,b,delta\n");
        for r in &self.rows {
            let seed = r.seed.map(|x| x.to_string()).unwrap_or_else(|| "mean".into());
            let epoch = r.epoch.map(|x| x.to_string()).unwrap_or_else(|| "final".into());
            s.push_str(&format!("{},{},{seed},{epoch},{},{},{}\n", r.variant_a, r.variant_b, r.a, r.b, r.delta));
        }
        s
    }
}

fn pairs<'a>(a: &'a RunReport, b: &'a RunReport) -> Result<Vec<(&'a VariantRun, &'a VariantRun)>> {
    if a.variants.len() == 1 && b.variants.len() == 1 {
        return Ok(vec![(&a.variants[0], &b.variants[0])]);
    }
    a.variants
        .iter()
        .map(|va| {
            b.variant(&va.name).map(|vb| (va, vb)).ok_or_else(|| {
                Error::Data(format!("variant {} of {} is missing from {}", va.name, a.name, b.name))
            })
        })
        .collect()
}

/// Per-epoch and final `b - a` deltas. Variants pair by name (or directly
/// when each report has one); seeds pair individually when both variants
/// ran the same seed list, otherwise seed means are compared.
pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    if a.task != b.task || a.metric != b.metric {
        return Err(Error::Data(format!(
            "cannot compare {} ({}) with {} ({})",
            a.name, a.metric, b.name, b.metric
        )));
    }
    let mut rows = Vec::new();
    for (va, vb) in pairs(a, b)? {
        let mut push = |seed, epoch, x: f64, y: f64| {
            rows.push(CompareRow {
                variant_a: va.name.clone(),
                variant_b: vb.name.clone(),
                seed,
                epoch,
                a: x,
                b: y,
                delta: y - x,
            })
        };
        let seeds_a: Vec<u64> = va.seeds.iter().map(|s| s.seed).collect();
        let seeds_b: Vec<u64> = vb.seeds.iter().map(|s| s.seed).collect();
        if seeds_a == seeds_b {
            for (sa, sb) in va.seeds.iter().zip(&vb.seeds) {
                for (ra, rb) in sa.records.iter().zip(&sb.records) {
                    push(Some(sa.seed), Some(ra.epoch), ra.val_metric, rb.val_metric);
                }
                push(Some(sa.seed), None, sa.final_metric, sb.final_metric);
            }
        } else {
            for (ea, eb) in va.per_epoch.iter().zip(&vb.per_epoch) {
                push(None, Some(ea.epoch), ea.mean, eb.mean);
            }
        }
        push(None, None, va.final_mean, vb.final_mean);
    }
    Ok(Comparison {
        metric: a.metric.clone(),
        rows,
    })
}

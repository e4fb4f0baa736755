use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Disjoint train/val/test index lists covering the whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl DatasetSplits {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Integer counts proportional to `ratios` summing to `n`; leftover units go
/// to the largest fractional parts, earlier splits winning ties.
fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i] as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Per-class seeded shuffle followed by a proportional cut. Each split's
/// indices come back in ascending (manifest) order.
pub fn stratified_split(labels: &[u8], ratios: [f64; 3], seed: u64) -> Result<DatasetSplits> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    if labels.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut out = DatasetSplits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        ratios,
        seed,
    };
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; at least 3 are needed for three splits",
                members.len()
            )));
        }
        let mut rng = Rng::from_parts(&[seed, class as u64]);
        rng.shuffle(&mut members);
        let [a, b, _] = largest_remainder(members.len(), &ratios);
        out.train.extend_from_slice(&members[..a]);
        out.val.extend_from_slice(&members[a..a + b]);
        out.test.extend_from_slice(&members[a + b..]);
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Label("labels must be 0 or 1".into()));
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

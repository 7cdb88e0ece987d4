//! Searched envelope for a binary uniform source with Hamming costs on both
//! sides, printed next to the classical distortion-rate curve.

use mdr_core::envelope::{build_curve, convexify, default_grid};
use mdr_core::oracle::ba_distortion_rate;
use mdr_core::outer::{Instance, OuterOptions};
use mdr_core::{CostMatrix, Distribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hamming = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])?;
    let pu = Distribution::uniform(2);
    let inst = Instance::new(pu.clone(), hamming.clone(), hamming.clone())?;
    let grid = default_grid(1.0, 11);
    let opts = OuterOptions {
        starts: 16,
        ..OuterOptions::default()
    };
    let points = build_curve(&inst, &grid, &opts)?;
    let values: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.value.map(|v| (p.rate, v)))
        .collect();
    println!("rate,envelope,shannon");
    for &r in &grid {
        let env = convexify(&values, r)?.value;
        let d = ba_distortion_rate(&pu, &hamming, r)?;
        println!("{r:.1},{env:.6},{d:.6}");
    }
    Ok(())
}

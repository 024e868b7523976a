//! Layer-wise mask overlap and its rank agreement with a similarity matrix
//! supplied from outside (here: distances between cluster centers).

use adaptive_tickets::analysis::{alignment_summary, similarity_matrix, Scope, SemanticMatrix};
use adaptive_tickets::baseline::Method;
use adaptive_tickets::experiment::{method_init, method_task, ClassificationConfig, SyntheticSpec};
use adaptive_tickets::extract::extract_tickets;

fn main() -> adaptive_tickets::error::Result<()> {
    let seed = 3;
    let k = 5;
    let data = SyntheticSpec {
        clusters: k,
        per_cluster: 120,
        test_per_cluster: None,
        dim: 6,
        spread: 1.0,
        separation: 4.0,
    }
    .generate(seed)?;
    let cfg = ClassificationConfig::desk(0.8).seeded(seed);
    let task = method_task(&data, Method::Rtl)?;
    let init = method_init(&data, &cfg, Method::Rtl, seed);
    let (masks, _) = extract_tickets(&init, &task, &cfg.extraction)?;

    let layers = masks.layer_shapes().len();
    let mut scopes = vec![Scope::Global];
    scopes.extend((0..layers).map(Scope::Layer));
    for &scope in &scopes {
        let sim = similarity_matrix(&masks, scope)?;
        println!("{:>7}: mean pairwise {:.3}", scope.label(), sim.mean_pairwise());
    }

    // Closer cluster means count as more similar.
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let rows: Vec<usize> = (0..data.train.len()).filter(|&i| data.train.labels[i] == c).collect();
            (0..data.train.dim())
                .map(|d| rows.iter().map(|&i| data.train.features.row(i)[d]).sum::<f64>() / rows.len() as f64)
                .collect()
        })
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let far = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| dist(&centers[i], &centers[j]))
        .fold(0.0, f64::max);
    let values = (0..k)
        .map(|i| (0..k).map(|j| 1.0 - dist(&centers[i], &centers[j]) / far).collect())
        .collect();
    let semantic = SemanticMatrix::new(masks.subset_ids().to_vec(), values)?;
    for (scope, rho) in alignment_summary(&masks, &semantic, &scopes)? {
        println!("alignment {scope:>7}: {rho:?}");
    }
    Ok(())
}

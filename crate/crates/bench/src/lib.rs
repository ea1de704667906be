//! Shared fixtures for the solver benchmarks.

use cat_core::mdp::value_iteration;
use cat_core::occupancy::compute_occupancy;
use cat_core::successor::compute_sf;
use cat_core::{GridConfig, GridWorld, Result, SourceEntry, SourceLibrary, DEFAULT_TOL};

fn block(x0: usize, x1: usize, y0: usize, y1: usize) -> Vec<[usize; 2]> {
    let mut cells = Vec::new();
    for x in x0..=x1 {
        for y in y0..=y1 {
            cells.push([x, y]);
        }
    }
    cells
}

/// A square grid of side `n` with a danger band in the middle rows.
pub fn grid(n: usize, danger_rows: (usize, usize)) -> Result<GridWorld> {
    let config = GridConfig::new(n, n, [0, n - 1], [n - 1, n - 1]).with_danger(block(
        1,
        n - 2,
        danger_rows.0,
        danger_rows.1,
    ));
    GridWorld::new(config)
}

/// Test task plus a library of sources trained on shifted danger bands.
pub struct Fixture {
    pub test: GridWorld,
    pub library: SourceLibrary,
}

pub fn fixture(n: usize, n_sources: usize) -> Result<Fixture> {
    let test = grid(n, (n / 2, n - 1))?;
    let mut entries = Vec::with_capacity(n_sources);
    for k in 0..n_sources {
        let top = (k % (n - 2)) + 1;
        let source = grid(n, (top, (top + 1).min(n - 1)))?;
        let (_, policy) = value_iteration(source.mdp(), DEFAULT_TOL)?;
        let id = format!("s{k}");
        let sf = compute_sf(
            source.mdp(),
            &policy,
            &source.features(),
            DEFAULT_TOL,
            id.clone(),
        )?;
        let d = compute_occupancy(source.mdp(), &policy)?;
        entries.push(
            SourceEntry::new(id.clone(), id, policy)
                .with_successor_features(sf)
                .with_occupancy(d),
        );
    }
    Ok(Fixture {
        test,
        library: SourceLibrary::new(entries)?,
    })
}

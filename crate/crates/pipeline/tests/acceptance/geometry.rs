use vecset4d::geometry::{marching_cubes, occupancy_query, primitives, vec3, Grid};

use crate::common::{cloud, Checks, Outcome};

const RADIUS: f64 = 0.5;

fn icosphere_occupancy(checks: &mut Checks) {
    let mesh = primitives::icosphere(RADIUS, 3);
    let queries: Vec<_> =
        cloud(200_000, 1.0, 11).into_iter().filter(|&q| (vec3::norm(q) - RADIUS).abs() > 0.05).collect();
    let occ = match occupancy_query(&mesh, &queries) {
        Ok(o) => o,
        Err(e) => return checks.error("icosphere occupancy", e),
    };
    let agree = queries.iter().zip(&occ).filter(|(q, &o)| (vec3::norm(**q) < RADIUS) == (o == 1)).count();
    let frac = agree as f64 / queries.len() as f64;
    checks.check(
        "icosphere occupancy",
        frac >= 0.999,
        format!("{:.4}% agree on {} points outside the band", 100.0 * frac, queries.len()),
    );
}

fn marching_cubes_sphere(checks: &mut Checks) {
    let resolution = 64;
    let (origin, cell, nodes) = Grid::nodes(resolution, -1.0, 1.0);
    let values = nodes.iter().map(|&p| RADIUS - vec3::norm(p)).collect();
    let grid = match Grid::new(resolution, origin, cell, values) {
        Ok(g) => g,
        Err(e) => return checks.error("marching cubes", e),
    };
    let mesh = marching_cubes(&grid, 0.0);
    let worst = mesh.vertices.iter().map(|&v| (vec3::norm(v) - RADIUS).abs()).fold(0.0, f64::max);
    checks.check(
        "mc radii",
        !mesh.is_empty() && worst <= 1.5 * cell,
        format!("{} vertices max |r - R| {:.2} cells", mesh.vertices.len(), worst / cell),
    );
    let euler = mesh.vertices.len() as i64 - (3 * mesh.faces.len() / 2) as i64 + mesh.faces.len() as i64;
    match mesh.validate_watertight() {
        Ok(()) => checks.check("mc watertight", euler == 2, format!("closed, euler characteristic {euler}")),
        Err(e) => checks.error("mc watertight", e),
    }
}

pub fn run() -> Outcome {
    let mut checks = Checks::new();
    icosphere_occupancy(&mut checks);
    marching_cubes_sphere(&mut checks);
    checks.finish()
}

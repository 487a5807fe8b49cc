use tunnel_core::packets::PacketSpec;
use tunnel_core::potential::PotentialProfile;
use tunnel_core::propagator::*;
use tunnel_core::units::UnitSystem;

fn main() {
    let units = UnitSystem::new(0.067).unwrap();
    let spec = PacketSpec::gaussian(0.18753876478771342, 15.0, 0.067).unwrap();
    let profile = PotentialProfile::rectangular(0.3, 50.0, 5.0).unwrap();
    let grid = GridSpec::auto(&spec, &profile, &units, 600.0);
    println!("grid x_min={:.1} x_max={:.1} n={} dt={:.5}", grid.x_min, grid.x_max, grid.n_points, grid.dt);
    let mut cn = GridState::initialize(&spec, &units, &grid).unwrap();
    for stage in [100.0, 200.0, 300.0, 400.0, 500.0, 600.0] {
        match evolve_unchecked(&mut cn, &profile, &units, stage, Stepper::CrankNicolson) {
            Ok(()) => {}
            Err(e) => println!("err: {e}"),
        }
        let n = cn.psi.len();
        let peak = cn.psi.iter().map(|a| a.norm()).fold(0.0f64, f64::max);
        println!("t={:5.0} leak={:.2e} peak={:.3e} edgeL={:.2e} edgeR={:.2e}",
            cn.t, cn.boundary_leak(), peak, cn.psi[0].norm(), cn.psi[n-1].norm());
        if stage == 600.0 {
            // profile of |psi| over the domain, decimated
            for i in (0..n).step_by(n/40) {
                println!("   x={:8.1}  |psi|={:.3e}", cn.x_at(i), cn.psi[i].norm());
            }
        }
    }
}

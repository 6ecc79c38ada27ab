//! The swap schedule as a CSV table over every (frame, condition, step).

use std::fmt::Write;

use flexti2v_core::EngineConfig;

pub const HEADER: &str = "m,n,t,P,t_tilde,active";

/// One row per `(m, n, t)` with `m` over frames, `n` over conditions and `t`
/// over DDIM steps `1..=K`. `P` is the swap fraction while the window is open.
pub fn schedule_table(cfg: &EngineConfig, positions: &[usize]) -> String {
    let sched = cfg.swap_schedule();
    let k = cfg.num_steps;
    let mut out = String::with_capacity(32 * cfg.num_frames * positions.len() * k);
    out.push_str(HEADER);
    out.push('\n');
    for m in 0..cfg.num_frames {
        for (n, &p) in positions.iter().enumerate() {
            let d = m.abs_diff(p);
            let fraction = sched.nominal_fraction(d);
            for t in 1..=k {
                let decision = sched.decide(d, t, k);
                let _ = writeln!(
                    out,
                    "{m},{n},{t},{fraction:.6},{:.6},{}",
                    decision.t_tilde, decision.active
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_count_and_spot_values() {
        let cfg = EngineConfig::default();
        let table = schedule_table(&cfg, &[0]);
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows[0], HEADER);
        assert_eq!(rows.len(), 1 + 16 * 20);
        assert_eq!(rows[1], "0,0,1,0.300000,10.000000,true");
        assert_eq!(rows[20], "0,0,20,0.300000,10.000000,false");
        // frame 15, step 5 and 6 around t_tilde = 5.5
        let base = 1 + 15 * 20;
        assert_eq!(rows[base + 4], "15,0,5,0.225000,5.500000,true");
        assert_eq!(rows[base + 5], "15,0,6,0.225000,5.500000,false");
    }

    #[test]
    fn fixed_schedule_ignores_distance() {
        let cfg = EngineConfig {
            enable_dynamic_control: false,
            ..EngineConfig::default()
        };
        let table = schedule_table(&cfg, &[0]);
        assert!(table
            .lines()
            .skip(1)
            .all(|r| r.contains(",0.300000,10.000000,")));
    }
}

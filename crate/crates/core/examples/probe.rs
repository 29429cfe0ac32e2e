//! Prints one summary line per (application, strategy) at a given load.
//! Usage: cargo run --example probe -- [users] [fps]

use sdpbench::backend::{run_pipeline, RunInput};
use sdpbench::metrics::{summarize_run, RunLabel};
use sdpbench::model::{Application, Strategy};
use sdpbench::sim::Topology;
use sdpbench::workloads::{build_pipeline, fanout_for, generate_requests, Calibration, LoadSpec};

fn main() -> sdpbench::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let users: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let fps: Option<u32> = args.get(2).and_then(|s| s.parse().ok());
    let cal = Calibration::embedded();
    let topo = Topology::testbed();
    for app in Application::ALL {
        let profile = cal.profile(app)?;
        let n = if app == Application::Video { users.min(10) } else { users };
        let load = LoadSpec { fps, ..LoadSpec::burst(n, 7) };
        let reqs = generate_requests(app, profile, &load)?;
        for strategy in Strategy::ALL {
            let pipeline = build_pipeline(app, profile, strategy, &cal.backends)?;
            let mut input = RunInput::new(&pipeline, &topo, &cal.backends, &reqs);
            input.fanout = fanout_for(app, profile, &load)?;
            let out = run_pipeline(&input)?;
            let label = RunLabel { application: app, strategy, users: n, fps };
            let s = summarize_run(label, &out.log, &out.ledger)?;
            println!(
                "{app:>12} {strategy:>4} n={n:<3} done={:<3} drop={:<3} pt={:>8.1} D={:>7.1} P={:>6.2} DAT={:>7.1} NCT={:>6.2} cpu={:>5.1} mem={:>5.1} rd={:>9.0} wr={:>9.0} rx={:>9.0} tx={:>9.0}",
                s.completed, s.dropped, s.processing_time, s.mean_d, s.mean_p, s.mean_dat, s.mean_nct,
                s.cpu_percent, s.memory_percent, s.disk_read_kb, s.disk_write_kb, s.net_rx_kb, s.net_tx_kb
            );
        }
    }
    Ok(())
}

//! After the vehicle loses its next hop it must rediscover a route and keep
//! delivering. Checked on the trace log of short 802.11 runs.

use wsnsim::engine::{simulate, Layer, RunOptions, TraceLine};
use wsnsim::mac::MacKind;
use wsnsim::scenario::Scenario;

fn find_from<'a>(
    lines: &'a [TraceLine],
    from: usize,
    pred: impl Fn(&TraceLine) -> bool,
) -> Option<(usize, &'a TraceLine)> {
    lines.iter().enumerate().skip(from).find(|(_, l)| pred(l))
}

#[test]
fn vehicle_rediscovers_after_link_break() {
    let mut sc = Scenario::default();
    sc.mac.kind = MacKind::Ieee80211;
    sc.horizon_s = 200.0;
    let mut checked = 0;
    for seed in 1..=10 {
        let r = simulate(&sc, seed, &RunOptions { trace: true });
        let v = r.vehicle;
        let lines = &r.trace;
        let mut from = 0;
        while let Some((i, brk)) = find_from(lines, from, |l| {
            l.node == v && l.layer == Layer::Rtg && l.event == "link-break"
        }) {
            from = i + 1;
            let Some((j, rreq)) = find_from(lines, i, |l| l.node == v && l.event == "rreq-originate") else {
                continue;
            };
            let Some((k, inst)) = find_from(lines, j, |l| {
                l.node == v && l.event == "route-install" && l.details.starts_with(&format!("dest={} ", r.server))
            }) else {
                continue;
            };
            assert!(brk.time <= rreq.time && rreq.time <= inst.time);
            let delivered = find_from(lines, k, |l| l.node == r.server && l.event == "recv");
            assert!(delivered.is_some(), "seed {seed}: nothing delivered after rediscovery at {}", inst.time.secs());
            checked += 1;
        }
    }
    assert!(checked > 0, "no vehicle link break observed in any run");
}

#![no_main]

use fedmix::topology::metropolis_weights;
use fedmix::Graph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = Graph::parse_edge_list(text) {
        // Re-rendering must parse back to the same graph.
        let again = Graph::parse_edge_list(&g.to_edge_list()).expect("rendered edge list parses");
        assert_eq!(g, again);
        if g.num_nodes() <= 64 {
            metropolis_weights(&g).validate(1e-9).expect("metropolis weights are valid");
        }
    }
});

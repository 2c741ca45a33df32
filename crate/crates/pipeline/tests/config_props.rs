use afford_pipeline::cache::digest;
use afford_pipeline::PipelineConfig;
use proptest::prelude::*;

proptest! {
    #[test]
    fn config_survives_json_and_only_threads_leave_the_fingerprint(
        rho0 in 0.01f64..0.99,
        eps in 0.001f64..0.2,
        theta_vis in 0u32..10,
        k_recall in 1usize..50,
        threads in 1usize..16,
        no_graph: bool,
    ) {
        let mut c = PipelineConfig { rho0, dbscan_eps: eps, theta_vis, k_recall, ..Default::default() };
        c.ablations.no_graph = no_graph;
        prop_assert!(c.validate().is_ok());
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(&back, &c);

        let fp = c.fingerprint_json();
        prop_assert_eq!(PipelineConfig { concurrency: threads, ..c.clone() }.fingerprint_json(), fp.clone());
        let moved = PipelineConfig { rho0: rho0 / 2.0, ..c.clone() };
        prop_assert_ne!(moved.fingerprint_json(), fp);
    }

    /// Part boundaries are part of the digest.
    #[test]
    fn digest_separates_parts(a in prop::collection::vec(any::<u8>(), 0..20), b in prop::collection::vec(any::<u8>(), 1..20)) {
        let mut joined = a.clone();
        joined.extend_from_slice(&b);
        prop_assert_ne!(digest(&[&a, &b]), digest(&[&joined]));
        prop_assert_eq!(digest(&[&a, &b]), digest(&[&a, &b]));
    }
}

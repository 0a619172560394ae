use ndm::eval::{gini, gini_report, PatchingRecord};

struct Table {
    dims: Vec<usize>,
    variances: Vec<f64>,
    effects: Vec<f64>,
    expected: (f64, f64, f64),
}

fn tables() -> Vec<(&'static str, Table)> {
    let mut t2_dims = vec![128, 96, 96, 64, 64, 64, 64];
    t2_dims.extend([32; 6]);
    let mut t3_dims = vec![192, 128];
    t3_dims.extend([64; 5]);
    t3_dims.extend([32; 4]);
    let mut t4_dims = vec![128, 128, 96, 96, 64, 64, 64];
    t4_dims.extend([32; 4]);
    vec![
        (
            "test5-ndm",
            Table {
                dims: t2_dims,
                variances: vec![2.1, 2.7, 1.3, 0.6, 0.8, 1.4, 1.7, 1.0, 1.0, 0.4, 4.0, 4.8, 0.3],
                effects: vec![5.4, 0.7, 1.8, 1.9, 29.7, 0.6, 0.6, 0.3, 0.6, 0.8, 1.2, 0.7, 0.7],
                expected: (0.72, 0.67, 0.78),
            },
        ),
        (
            "test2-pca1",
            Table {
                dims: t3_dims,
                variances: vec![0.3, 0.3, 0.2, 0.2, 0.3, 0.3, 0.4, 0.3, 0.3, 0.4, 10.7],
                effects: vec![14.8, 11.6, 7.6, 4.2, 3.1, 2.5, 2.9, 1.4, 1.6, 0.9, 2.2],
                expected: (0.46, 0.22, 0.52),
            },
        ),
        (
            "test1-identity",
            Table {
                dims: t4_dims,
                variances: vec![0.7, 1.0, 0.5, 7.9, 0.4, 0.2, 0.2, 0.1, 0.1, 0.1, 0.1],
                effects: vec![3.9, 3.7, 2.3, 2.5, 1.6, 1.7, 1.7, 0.7, 0.8, 0.8, 0.7],
                expected: (0.33, 0.05, 0.23),
            },
        ),
    ]
}

#[test]
fn raw_table_row_gini() {
    let (_, t) = &tables()[0];
    let g = gini(&t.effects).unwrap().value;
    assert!((g - 0.72).abs() <= 0.005, "{g}");
}

#[test]
fn reference_gini_triples() {
    for (name, t) in tables() {
        let rec = PatchingRecord::new(t.effects, t.dims, t.variances).unwrap();
        let rep = gini_report(&rec).unwrap();
        let (raw, dim, var) = t.expected;
        assert!((rep.raw - raw).abs() <= 0.01, "{name}: raw {} vs {raw}", rep.raw);
        assert!((rep.per_dim - dim).abs() <= 0.01, "{name}: d_s {} vs {dim}", rep.per_dim);
        assert!((rep.per_var - var).abs() <= 0.01, "{name}: Var_s {} vs {var}", rep.per_var);
        assert_eq!(rep.clamped, 0);
    }
}

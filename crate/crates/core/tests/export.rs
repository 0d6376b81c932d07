mod support;

use counterpoint::export::{
    deserialize, eval_fixed, from_fixed, quantize_forest, quantize_input, serialize, MAGIC,
};
use counterpoint::learners::{fit_forest, ForestParams};
use counterpoint::rng::seeded;
use counterpoint::Error;
use rand::Rng as _;

#[test]
fn fixed_point_tracks_float_forest() {
    let (x, y) = support::random_regression(400, 3, 17);
    let forest = fit_forest(&x, &y, &ForestParams { n_trees: 20, ..Default::default() }, 3).unwrap();
    let fixed = quantize_forest(&forest, 32).unwrap();
    let range = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
    let mut rng = seeded(99);
    for _ in 0..2000 {
        let row: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
        let float = forest.predict_row(&|j| row[j]);
        let q = quantize_input(&row, 32).unwrap();
        let int = from_fixed(eval_fixed(&fixed, &q).unwrap(), 32);
        assert!((float - int).abs() <= range / (1u64 << 20) as f64, "{float} vs {int}");
    }
}

#[test]
fn bytes_round_trip_and_reject_corruption() {
    let (x, y) = support::random_regression(100, 2, 2);
    let forest = fit_forest(&x, &y, &ForestParams { n_trees: 3, ..Default::default() }, 0).unwrap();
    let fixed = quantize_forest(&forest, 24).unwrap();
    let bytes = serialize(&fixed);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(deserialize(&bytes).unwrap(), fixed);
    assert_eq!(serialize(&deserialize(&bytes).unwrap()), bytes);

    assert!(matches!(deserialize(&bytes[..bytes.len() - 1]), Err(Error::Truncated)));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(deserialize(&extra), Err(Error::TrailingBytes(1))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(deserialize(&magic), Err(Error::BadMagic)));
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(deserialize(&version), Err(Error::BadVersion(9))));
}

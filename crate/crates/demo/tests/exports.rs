use sdnum_demo::{allocate_text, fit_text, wildfire_frames_text};

#[test]
fn frames_have_one_line_per_epoch_and_a_cell_per_character() {
    let text = wildfire_frames_text(1, 2, 6, 3).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("16 16"));
    let frames: Vec<&str> = lines.collect();
    assert_eq!(frames.len(), 7);
    for f in &frames {
        let parts: Vec<&str> = f.split('|').collect();
        assert_eq!(parts[0].len(), 256);
        assert!(parts[0].chars().all(|c| ".*#o".contains(c)));
        assert_eq!(parts[1].split(',').count(), 2);
    }
    assert!(frames[0].contains('*'), "the first frame shows the initial fires");
    assert_eq!(text, wildfire_frames_text(1, 2, 6, 3).unwrap());
}

#[test]
fn unknown_location_is_an_error() {
    assert!(wildfire_frames_text(9, 1, 3, 0).is_err());
}

#[test]
fn fit_returns_model_and_fitted_rows() {
    let text = fit_text("0,0\n1,0\n2,2\n3,2.2\n").unwrap();
    let (model, rows) = text.split_once("\n\n").unwrap();
    assert!(model.starts_with("pwl-utility v1"));
    let fitted: Vec<f64> = rows.lines().map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(fitted.len(), 4);
    for w in fitted.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
    assert!(fit_text("0;1").is_err());
}

#[test]
fn allocation_uses_the_supply_and_favours_heavier_weights() {
    let text = allocate_text("1, 2, 3.5", 6).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let units: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(units.iter().sum::<f64>(), 6.0);
    assert!(units[0] <= units[1] && units[1] <= units[2]);
    assert!(allocate_text("1,-2", 3).is_err());
}

use strip_demo::Demo;

#[test]
fn insert_step_and_audit() {
    let mut d = Demo::new(3, 9).unwrap();
    assert!(d.insert("3/8", "1/2").unwrap().starts_with("t=1 item #1 "));
    let lines = d.step(60).unwrap();
    assert_eq!(lines.lines().count(), 60);
    assert!(d.audit().starts_with("ok: 61 items"));
    assert!(d.stats().starts_with("items 61"));
    assert!(d.svg().starts_with("<svg"));
}

#[test]
fn bad_input_is_rejected_without_side_effects() {
    let mut d = Demo::new(3, 1).unwrap();
    assert!(d.insert("abc", "1").is_err());
    assert!(d.insert("2", "1").is_err());
    assert!(d.stats().starts_with("items 0"));
    assert!(d.insert("1/2", "1/2").unwrap().contains("item #1 "));
}

#[test]
fn tiny_container_height_is_refused() {
    assert!(Demo::new(1, 0).is_err());
}

#[test]
fn streams_are_reproducible() {
    let mut a = Demo::new(5, 4).unwrap();
    let mut b = Demo::new(5, 4).unwrap();
    assert_eq!(a.step(40).unwrap(), b.step(40).unwrap());
    assert_eq!(a.svg(), b.svg());
}

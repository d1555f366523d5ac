//! Writes the demo input files used by the README walkthrough.

fn main() {
    let case = janus_core::corpus::worked_example();
    let dir = std::path::Path::new("demo");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("victim.s"), &case.asm).unwrap();
    std::fs::write(dir.join("victim.sigs"), &case.sidecar).unwrap();
    let scenario = format!(
        "program victim.s\nhardened victim.hardened.s\n{}",
        case.scenario.unwrap()
    );
    std::fs::write(dir.join("attack.scn"), scenario).unwrap();
    println!("demo files written");
}

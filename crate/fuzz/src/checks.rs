//! Fuzz target bodies. Each accepts arbitrary bytes and panics only when a
//! parser breaks one of its own invariants.

use delaycea::io::{
    format_delay_draw, format_delays, parse_analysis_toml, parse_delay_draw, parse_delays,
    parse_design_toml, parse_grid, parse_profile, write_csv, CsvOptions, DelaySource, EventMode,
    InputShape,
};
use delaycea::report::Report;

/// First byte picks the shape and event mode, the rest is the file.
pub fn read_csv(data: &[u8]) {
    let Some((&mode, body)) = data.split_first() else {
        return;
    };
    let options = CsvOptions {
        shape: [InputShape::Auto, InputShape::Counting, InputShape::Raw][usize::from(mode % 3)],
        events: if mode & 4 == 0 {
            EventMode::Strict
        } else {
            EventMode::Lenient
        },
        ..CsvOptions::default()
    };
    let Ok(ing) = delaycea::io::read_csv(body, &options, 10.0) else {
        return;
    };
    for r in &ing.dataset.records {
        assert!(r.entry.is_finite() && r.exit.is_finite() && r.entry < r.exit);
        assert!(r.entry >= 0.0 && r.stratum >= 1);
        assert_eq!(r.covariates.len(), ing.dataset.p);
    }
    // Counting rows written back read in unchanged.
    let mut buf = Vec::new();
    write_csv(&ing.dataset, &ing.covariate_names, &mut buf).expect("writable");
    let again = delaycea::io::read_csv(
        buf.as_slice(),
        &CsvOptions {
            shape: InputShape::Counting,
            events: EventMode::Strict,
            ..CsvOptions::default()
        },
        10.0,
    )
    .expect("written file reads back");
    assert_eq!(again.dataset.records, ing.dataset.records);
}

pub fn parse_report(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(report) = Report::from_jsonl(text) else {
        return;
    };
    let out = report.to_jsonl();
    assert_eq!(Report::from_jsonl(&out).expect("own output parses"), report);
    let _ = report.to_human(6);
    let _ = report.curves_csv();
}

pub fn parse_delay_spec(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(DelaySource::Spec(spec)) = parse_delays(text) {
        let back = parse_delays(&format_delays(&spec)).expect("formatted spec parses");
        assert_eq!(back, DelaySource::Spec(spec.clone()));
        let _ = spec.atoms(10.0);
    }
    if let Ok(draw) = parse_delay_draw(text) {
        assert_eq!(parse_delay_draw(&format_delay_draw(&draw)).unwrap(), draw);
    }
}

pub fn parse_profile_spec(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_profile(text);
    if let Ok(grid) = parse_grid(text) {
        assert!(!grid.is_empty() && grid.len() <= 100_000);
        assert!(grid.iter().all(|v| v.is_finite()));
    }
}

pub fn parse_config_toml(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_design_toml(text) {
        if let Ok(design) = cfg.to_design() {
            design.validate().expect("to_design validates");
        }
        let _ = cfg.scenario_list();
    }
    let _ = parse_analysis_toml(text);
}

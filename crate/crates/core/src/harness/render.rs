use serde_json::Value;

use super::bench::{ArmOutcome, BenchReport};

/// Removes every object member named `timing`, recursively. What remains of
/// a report is deterministic for a fixed model, dataset and seed.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("timing");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} records, model {} ({} layers, d={}, |V|={})\n\n",
            self.records,
            &self.model.fingerprint[..12.min(self.model.fingerprint.len())],
            self.model.config.n_layers,
            self.model.config.hidden_dim,
            self.model.config.vocab_size
        );
        out.push_str(&format!(
            "{:<10} {:>3} {:>8} {:>8} {:>7} {:>9} {:>9} {:>10}\n",
            "arm", "T", "correct", "acc%", "failed", "mean SI", "mean SO", "wall (s)"
        ));
        for (name, arm) in [("baseline", &self.baseline), ("slot", &self.slot)] {
            if let Some(s) = arm {
                out.push_str(&format!(
                    "{:<10} {:>3} {:>8} {:>8.2} {:>7} {:>9.2} {:>9.2} {:>10.2}\n",
                    name,
                    s.steps,
                    s.correct,
                    100.0 * s.accuracy,
                    s.failed,
                    s.timing.mean_si,
                    s.timing.mean_so,
                    s.timing.total_wall_seconds
                ));
            }
        }
        if let Some(g) = self.accuracy_gain_points {
            out.push_str(&format!("\naccuracy change: {g:+.2} points\n"));
        }
        if self.failed_records > 0 {
            out.push_str(&format!("records with failures: {}\n", self.failed_records));
        }
        let p = &self.published;
        out.push_str(&format!(
            "\n{}: {} on {}, {:.2}% -> {:.2}% ({:+.2})\n",
            p.status, p.model, p.benchmark, p.baseline_percent, p.adapted_percent, p.gain_points
        ));
        out
    }

    /// One row per record and arm.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id",
            "arm",
            "steps",
            "status",
            "correct",
            "answer",
            "reference",
            "prompt_tokens",
            "new_tokens",
            "initial_loss",
            "final_loss",
            "prompt_seconds",
            "generate_seconds",
            "si",
            "so",
            "error",
        ])?;
        for r in &self.results {
            for (arm, steps, outcome) in [("baseline", 0, &r.baseline), ("slot", self.config.slot.steps, &r.slot)] {
                let Some(outcome) = outcome else { continue };
                let mut row = vec![r.id.clone(), arm.into(), steps.to_string()];
                match outcome {
                    ArmOutcome::Completed(m) => {
                        let loss = |x: Option<&f64>| x.map(|v| v.to_string()).unwrap_or_default();
                        row.extend([
                            "ok".into(),
                            m.correct.to_string(),
                            m.answer.clone().unwrap_or_default(),
                            r.reference_answer.clone(),
                            m.prompt_tokens.to_string(),
                            m.new_tokens.to_string(),
                            loss(m.loss_trace.first()),
                            loss(m.loss_trace.last()),
                            m.timing.prompt_seconds.to_string(),
                            m.timing.generate_seconds.to_string(),
                            m.timing.si.to_string(),
                            m.timing.so.to_string(),
                            String::new(),
                        ]);
                    }
                    ArmOutcome::Failed { error } => {
                        row.extend(["failed".into(), "false".into()]);
                        row.extend(std::iter::repeat_n(String::new(), 10));
                        row.push(error.clone());
                    }
                }
                w.write_record(&row)?;
            }
        }
        super::csv_string(w)
    }
}

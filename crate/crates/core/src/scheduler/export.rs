use std::io::Write;

use super::Schedule;
use crate::error::Result;

impl Schedule {
    /// One row per scheduled user: `t,L,cluster_members,user_id`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "L", "cluster_members", "user_id"])?;
        for (t, rb) in self.rbs.iter().enumerate() {
            for s in &rb.sets {
                for k in &s.users {
                    out.write_record([t.to_string(), rb.size.to_string(), s.cluster.joined(), k.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let realized: Vec<_> = self
            .realized
            .iter()
            .map(|r| serde_json::json!({"user": r.user, "cluster": r.cluster.members(), "fraction": r.fraction, "rate": r.rate}))
            .collect();
        let mut v = serde_json::json!({
            "horizon": self.horizon,
            "realized_fractions": realized,
            "throughputs": self.throughputs,
            "queue_peaks": self.queue_peaks,
        });
        if let Some(trace) = &self.queue_trace {
            v["queue_trace"] = serde_json::json!(trace);
        }
        v
    }
}

//! Transport-independent REST routing. [`handle`] maps a method and request
//! target to a status, content type and body; the HTTP server is a thin
//! adapter around it.

use serde::Serialize;

use super::{Monitor, QueryError, SeriesPoint, SmoothingKind, SmoothingSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: String,
}

const JSON: &str = "application/json";
const CSV: &str = "text/csv";

fn json<T: Serialize>(status: u16, value: &T) -> ApiResponse {
    ApiResponse {
        status,
        content_type: JSON,
        body: serde_json::to_string(value).expect("response serializes"),
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

fn error(status: u16, kind: &str, message: impl Into<String>) -> ApiResponse {
    json(
        status,
        &ErrorBody {
            error: kind,
            message: message.into(),
        },
    )
}

#[derive(Serialize)]
struct ReadingsBody {
    node_id: u16,
    smoothing: SmoothingKind,
    window: usize,
    readings: Vec<SeriesPoint>,
}

#[derive(Serialize)]
struct NotFoundBody {
    error: &'static str,
    node_id: u16,
    readings: [SeriesPoint; 0],
}

#[derive(Serialize)]
struct StatsBody {
    ingested: u64,
    duplicates: u64,
    rejected: u64,
    nodes: usize,
    readings: usize,
}

fn query_pairs(query: &str) -> Vec<(String, String)> {
    url::form_urlencoded::parse(query.as_bytes())
        .into_owned()
        .collect()
}

fn param<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .filter(|v| !v.is_empty())
}

fn parse_param<T: std::str::FromStr>(
    pairs: &[(String, String)],
    key: &str,
) -> Result<Option<T>, ApiResponse> {
    match param(pairs, key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| error(400, "bad_request", format!("invalid {key}: {v:?}"))),
    }
}

pub fn handle(monitor: &Monitor, method: &str, target: &str) -> ApiResponse {
    if method != "GET" {
        return error(405, "method_not_allowed", format!("{method} not supported"));
    }
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let pairs = query_pairs(query);
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let result = match segments.as_slice() {
        ["api", "nodes"] => Ok(json(200, &*monitor.snapshot())),
        ["api", "nodes", id, "readings"] => readings(monitor, id, &pairs),
        ["api", "rssi", "fit"] => fit(monitor, &pairs),
        ["api", "stats"] => Ok(stats(monitor)),
        ["api", "export.csv"] => export_csv(monitor, &pairs),
        _ => Err(error(404, "not_found", format!("no route for {path}"))),
    };
    result.unwrap_or_else(|e| e)
}

fn readings(
    monitor: &Monitor,
    id: &str,
    pairs: &[(String, String)],
) -> Result<ApiResponse, ApiResponse> {
    let node_id: u16 = id
        .parse()
        .map_err(|_| error(400, "bad_request", format!("invalid node id {id:?}")))?;
    let from = parse_param::<f64>(pairs, "from")?.unwrap_or(f64::NEG_INFINITY);
    let to = parse_param::<f64>(pairs, "to")?.unwrap_or(f64::INFINITY);
    let kind = match param(pairs, "smoothing") {
        None => SmoothingKind::None,
        Some(s) => s
            .parse()
            .map_err(|e: String| error(400, "bad_request", e))?,
    };
    let window = parse_param::<usize>(pairs, "window")?;
    let spec = SmoothingSpec::from_kind(kind, window).map_err(|e| error(400, "bad_request", e))?;
    match monitor.query_readings(node_id, from, to, &spec) {
        Ok(readings) => Ok(json(
            200,
            &ReadingsBody {
                node_id,
                smoothing: kind,
                window: spec.window(),
                readings,
            },
        )),
        Err(QueryError::NotFound(node_id)) => Ok(json(
            404,
            &NotFoundBody {
                error: "not_found",
                node_id,
                readings: [],
            },
        )),
        Err(e) => Err(error(400, "bad_request", e.to_string())),
    }
}

fn fit(monitor: &Monitor, pairs: &[(String, String)]) -> Result<ApiResponse, ApiResponse> {
    let unit_m =
        parse_param::<f64>(pairs, "unit_m")?.unwrap_or(crate::pathloss::DEFAULT_DISTANCE_UNIT_M);
    if !(unit_m > 0.0 && unit_m.is_finite()) {
        return Err(error(400, "bad_request", "unit_m must be positive"));
    }
    match monitor.fit_observed_rssi(unit_m) {
        Ok(report) => Ok(json(200, &report)),
        Err(e) => Err(error(422, "fit_failed", e.to_string())),
    }
}

fn stats(monitor: &Monitor) -> ApiResponse {
    let (c, nodes, readings) = monitor.read(|s| (s.counters(), s.node_ids().count(), s.len()));
    json(
        200,
        &StatsBody {
            ingested: c.ingested,
            duplicates: c.duplicates,
            rejected: c.rejected,
            nodes,
            readings,
        },
    )
}

fn export_csv(monitor: &Monitor, pairs: &[(String, String)]) -> Result<ApiResponse, ApiResponse> {
    let node = parse_param::<u16>(pairs, "node")?;
    let body = monitor.read(|s| {
        let mut out = String::from("ts,node_id,temp_c,rssi_dbm,battery_mv\n");
        let ids: Vec<u16> = match node {
            Some(id) => vec![id],
            None => s.node_ids().collect(),
        };
        for id in ids {
            for r in s.readings(id).unwrap_or(&[]) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.timestamp_s, r.node_id, r.temp_c, r.rssi_dbm, r.battery_mv
                ));
            }
        }
        out
    });
    Ok(ApiResponse {
        status: 200,
        content_type: CSV,
        body,
    })
}

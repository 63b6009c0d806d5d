//! Points of interest inside inferred areas.
//!
//! Two providers: an offline file (CSV or GeoJSON) and an Overpass API
//! client whose responses are cached on disk, so a run can be replayed
//! without network access.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

use crate::attack::area::AreaEstimate;
use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum PoiError {
    #[error("POI endpoint unreachable: {0}")]
    Network(String),
    #[error("POI endpoint returned HTTP {0}")]
    Http(u16),
    #[error("cannot parse POI data: {0}")]
    Parse(String),
    #[error("POI cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub id: String,
    pub point: GeoPoint,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

pub trait PoiProvider: Send + Sync {
    /// POIs whose location falls in a set cell of `area`, sorted by id.
    fn pois_in(&self, area: &AreaEstimate) -> Result<Vec<PoiRecord>, PoiError>;
}

/// Looks up the POIs of `area` through `provider`. An empty area never
/// touches the provider.
pub fn query_pois(area: &AreaEstimate, provider: &dyn PoiProvider) -> Result<Vec<PoiRecord>, PoiError> {
    if area.is_empty() {
        return Ok(Vec::new());
    }
    provider.pois_in(area)
}

fn filter_sorted<'a>(pois: impl Iterator<Item = &'a PoiRecord>, area: &AreaEstimate) -> Vec<PoiRecord> {
    let mut out: Vec<PoiRecord> = pois.filter(|p| area.contains(p.point)).cloned().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

#[derive(Debug, Clone, Default)]
pub struct OfflinePois {
    pois: Vec<PoiRecord>,
}

impl OfflinePois {
    pub fn new(pois: Vec<PoiRecord>) -> Self {
        Self { pois }
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    /// CSV with columns `id,lat,lon[,tags]`, tags as `key=value;key=value`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, PoiError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers().map_err(|e| PoiError::Parse(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(id_c), Some(lat_c), Some(lon_c)) = (col("id"), col("lat"), col("lon")) else {
            return Err(PoiError::Parse("POI CSV needs id, lat and lon columns".into()));
        };
        let tags_c = col("tags");
        let mut pois = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PoiError::Parse(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = || PoiError::Parse(format!("bad POI row {}", line + 2));
            let lat: f64 = field(lat_c).parse().map_err(|_| bad())?;
            let lon: f64 = field(lon_c).parse().map_err(|_| bad())?;
            let point = GeoPoint::new(lat, lon).map_err(|_| bad())?;
            let tags = tags_c.map(|c| parse_tags(field(c))).unwrap_or_default();
            pois.push(PoiRecord {
                id: field(id_c).to_string(),
                point,
                tags,
            });
        }
        Ok(Self { pois })
    }

    /// GeoJSON `FeatureCollection` of `Point` features. The id comes from
    /// the feature `id` or the `id` property; other string properties
    /// become tags.
    pub fn from_geojson<R: Read>(input: R) -> Result<Self, PoiError> {
        let doc: serde_json::Value = serde_json::from_reader(input).map_err(|e| PoiError::Parse(e.to_string()))?;
        let features = doc
            .get("features")
            .and_then(|f| f.as_array())
            .ok_or_else(|| PoiError::Parse("missing features array".into()))?;
        let mut pois = Vec::new();
        for (i, f) in features.iter().enumerate() {
            let bad = || PoiError::Parse(format!("bad feature #{i}"));
            let coords = f
                .pointer("/geometry/coordinates")
                .and_then(|c| c.as_array())
                .ok_or_else(bad)?;
            let lon = coords.first().and_then(|v| v.as_f64()).ok_or_else(bad)?;
            let lat = coords.get(1).and_then(|v| v.as_f64()).ok_or_else(bad)?;
            let point = GeoPoint::new(lat, lon).map_err(|_| bad())?;
            let props = f.get("properties").and_then(|p| p.as_object());
            let id = f
                .get("id")
                .or_else(|| props.and_then(|p| p.get("id")))
                .map(json_to_string)
                .ok_or_else(bad)?;
            let tags = props
                .map(|p| {
                    p.iter()
                        .filter(|(k, _)| k.as_str() != "id")
                        .map(|(k, v)| (k.clone(), json_to_string(v)))
                        .collect()
                })
                .unwrap_or_default();
            pois.push(PoiRecord { id, point, tags });
        }
        Ok(Self { pois })
    }
}

fn json_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_tags(s: &str) -> BTreeMap<String, String> {
    s.split(';')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .collect()
}

impl PoiProvider for OfflinePois {
    fn pois_in(&self, area: &AreaEstimate) -> Result<Vec<PoiRecord>, PoiError> {
        Ok(filter_sorted(self.pois.iter(), area))
    }
}

pub const DEFAULT_OVERPASS_ENDPOINT: &str = "https://overpass-api.de/api/interpreter";

/// OSM keys whose tagged nodes count as POIs.
pub fn default_poi_keys() -> Vec<String> {
    ["amenity", "shop", "office", "tourism", "leisure", "craft", "healthcare"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverpassConfig {
    pub endpoint: String,
    pub timeout_s: u64,
    pub cache_dir: PathBuf,
    #[serde(default = "default_poi_keys")]
    pub keys: Vec<String>,
}

/// Overpass API client, bounding-box queries with an on-disk cache keyed
/// by the query text.
#[derive(Debug)]
pub struct OverpassProvider {
    cfg: OverpassConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct OverpassResponse {
    elements: Vec<OverpassElement>,
}

#[derive(Deserialize)]
struct OverpassElement {
    #[serde(rename = "type")]
    kind: String,
    id: u64,
    lat: Option<f64>,
    lon: Option<f64>,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

impl OverpassProvider {
    pub fn new(cfg: OverpassConfig) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s.max(1))))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            cfg,
        }
    }

    pub fn query_text(&self, bbox: (f64, f64, f64, f64)) -> String {
        let (s, w, n, e) = bbox;
        let bb = format!("{s:.7},{w:.7},{n:.7},{e:.7}");
        let mut q = format!("[out:json][timeout:{}];(", self.cfg.timeout_s.max(1));
        for k in &self.cfg.keys {
            q.push_str(&format!("node[\"{k}\"]({bb});"));
        }
        q.push_str(");out body;");
        q
    }

    pub fn cache_path(&self, query: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(self.cfg.endpoint.as_bytes());
        h.update([0u8]);
        h.update(query.as_bytes());
        self.cfg.cache_dir.join(format!("{}.json", hex::encode(h.finalize())))
    }

    fn fetch(&self, query: &str) -> Result<String, PoiError> {
        let path = self.cache_path(query);
        if let Ok(body) = std::fs::read_to_string(&path) {
            return Ok(body);
        }
        let mut resp = self
            .agent
            .post(&self.cfg.endpoint)
            .send_form([("data", query)])
            .map_err(|e| PoiError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(PoiError::Http(status));
        }
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| PoiError::Network(e.to_string()))?;
        parse_overpass(&body)?;
        std::fs::create_dir_all(&self.cfg.cache_dir)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(body)
    }
}

fn parse_overpass(body: &str) -> Result<Vec<PoiRecord>, PoiError> {
    let resp: OverpassResponse = serde_json::from_str(body).map_err(|e| PoiError::Parse(e.to_string()))?;
    Ok(resp
        .elements
        .into_iter()
        .filter_map(|el| {
            let point = GeoPoint::new(el.lat?, el.lon?).ok()?;
            Some(PoiRecord {
                id: format!("{}/{}", el.kind, el.id),
                point,
                tags: el.tags,
            })
        })
        .collect())
}

impl PoiProvider for OverpassProvider {
    fn pois_in(&self, area: &AreaEstimate) -> Result<Vec<PoiRecord>, PoiError> {
        let Some(bbox) = area.bounding_box() else {
            return Ok(Vec::new());
        };
        let body = self.fetch(&self.query_text(bbox))?;
        let pois = parse_overpass(&body)?;
        Ok(filter_sorted(pois.iter(), area))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn area() -> AreaEstimate {
        AreaEstimate::from_rect(gp(35.0, 139.0), 200.0, 200.0, 10.0)
    }

    #[test]
    fn offline_csv_filters_by_area() {
        let csv = "id,lat,lon,tags\na,35.0,139.0,amenity=cafe;name=X\nb,35.0005,139.0005,shop=bakery\nc,35.1,139.0,\n";
        let p = OfflinePois::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.len(), 3);
        let got = query_pois(&area(), &p).unwrap();
        let ids: Vec<&str> = got.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(got[0].tags["amenity"], "cafe");
        assert!(query_pois(&AreaEstimate::empty(10.0), &p).unwrap().is_empty());
    }

    #[test]
    fn boundary_poi_follows_owning_cell() {
        let a = area();
        let cell = a.cells_sorted()[0];
        // south-west corner of a set cell belongs to that cell
        let south = cell.0 as f64 * 10.0 / crate::geo::METERS_PER_DEG_LAT;
        let center = a.cell_center(cell);
        let on_edge = gp(south, center.lon());
        assert_eq!(a.cell_of(on_edge), cell);
        let p = OfflinePois::new(vec![PoiRecord { id: "edge".into(), point: on_edge, tags: BTreeMap::new() }]);
        assert_eq!(p.pois_in(&a).unwrap().len(), 1);
    }

    #[test]
    fn offline_geojson() {
        let doc = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","id":7,"geometry":{"type":"Point","coordinates":[139.0,35.0]},"properties":{"amenity":"school"}},
            {"type":"Feature","geometry":{"type":"Point","coordinates":[139.0,36.0]},"properties":{"id":"far"}}]}"#;
        let p = OfflinePois::from_geojson(doc.as_bytes()).unwrap();
        let got = p.pois_in(&area()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "7");
        assert_eq!(got[0].tags["amenity"], "school");
    }

    fn provider(endpoint: String, dir: &std::path::Path) -> OverpassProvider {
        OverpassProvider::new(OverpassConfig {
            endpoint,
            timeout_s: 2,
            cache_dir: dir.to_path_buf(),
            keys: default_poi_keys(),
        })
    }

    const BODY: &str = r#"{"elements":[{"type":"node","id":1,"lat":35.0,"lon":139.0,"tags":{"amenity":"cafe"}},{"type":"node","id":2,"lat":35.5,"lon":139.0}]}"#;

    #[test]
    fn overpass_unreachable_is_network_error() {
        let dir = tempfile::tempdir().unwrap();
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = provider(format!("http://127.0.0.1:{port}/api/interpreter"), dir.path());
        match p.pois_in(&area()) {
            Err(PoiError::Network(_)) => {}
            other => panic!("expected network error, got {other:?}"),
        }
    }

    #[test]
    fn overpass_fetches_then_serves_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            std::io::Read::read_exact(&mut reader, &mut body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                BODY.len(),
                BODY
            )
            .unwrap();
            String::from_utf8(body).unwrap()
        });
        let p = provider(format!("http://{addr}/api/interpreter"), dir.path());
        let got = p.pois_in(&area()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "node/1");
        let request_body = server.join().unwrap();
        assert!(request_body.starts_with("data="));

        // server is gone; the cache answers
        let again = p.pois_in(&area()).unwrap();
        assert_eq!(again, got);
    }

    #[test]
    fn overpass_http_error() {
        let dir = tempfile::tempdir().unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = std::io::Read::read(&mut stream, &mut buf);
            let _ = write!(stream, "HTTP/1.1 429 Too Many Requests\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        });
        let p = provider(format!("http://{addr}/"), dir.path());
        assert!(matches!(p.pois_in(&area()), Err(PoiError::Http(429))));
    }
}

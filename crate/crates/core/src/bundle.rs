//! On-disk region bundle: sites, incidents, no-fly zones, optional roads,
//! elevation and fitted surrogates.
//!
//! ```text
//! config.toml
//! sites.csv        id,easting,northing,is_new,cost,pop_density,dist_to_infra
//! incidents.csv    id,easting,northing,hour,t_astar,big_intsects,mid_intsects,turns,pop_density,length_km
//! nfz.json
//! stations.csv     optional ambulance bases: id,easting,northing
//! elevation.csv    optional: id,elevation
//! roads/nodes.csv  optional, with roads/edges.csv
//! surrogates/      optional wind_speed.json, wind_direction.json, ambulance.json, drone.json
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, ConfigError};
use crate::demand::{read_road_graph, write_road_graph, AmbulanceFeatures, IncidentRecord, RoadGraph};
use crate::designer::SiteRecord;
use crate::environment::WindModel;
use crate::flight::{nfz_filter, DronePhaseModels, Location, NoFlyZone};
use crate::surrogate::{load_gp, load_linear, save_gp, save_linear, LinearModel, SurrogateError};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{file}{}{}: {message}", row.map(|r| format!(", row {r}")).unwrap_or_default(), column.as_ref().map(|c| format!(", column '{c}'")).unwrap_or_default())]
    Schema {
        file: String,
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bundle has no {0} surrogate")]
    MissingSurrogate(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

impl BundleError {
    fn schema(file: &str, row: Option<usize>, column: Option<&str>, message: impl Into<String>) -> Self {
        Self::Schema {
            file: file.to_string(),
            row,
            column: column.map(str::to_string),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SiteRow {
    id: String,
    easting: f64,
    northing: f64,
    is_new: bool,
    cost: f64,
    pop_density: f64,
    dist_to_infra: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IncidentRow {
    id: String,
    easting: f64,
    northing: f64,
    hour: u8,
    t_astar: f64,
    big_intsects: f64,
    mid_intsects: f64,
    turns: f64,
    pop_density: f64,
    length_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: String,
    pub easting: f64,
    pub northing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ElevationRow {
    id: String,
    elevation: f64,
}

#[derive(Debug, Clone)]
pub struct RegionBundle {
    pub config: Config,
    pub sites: Vec<SiteRecord>,
    pub incidents: Vec<IncidentRecord>,
    pub nfz: Vec<NoFlyZone>,
    pub stations: Vec<StationRecord>,
    /// Elevation by site or incident id, in metres.
    pub elevation: Option<BTreeMap<String, f64>>,
    pub roads: Option<RoadGraph>,
    pub wind: Option<WindModel>,
    pub ambulance: Option<LinearModel<f64>>,
    pub drone: Option<DronePhaseModels>,
}

/// Sites and incidents left after removing everything inside a no-fly zone.
#[derive(Debug, Clone)]
pub struct FilteredRegion {
    pub sites: Vec<SiteRecord>,
    pub incidents: Vec<IncidentRecord>,
    pub excluded_sites: Vec<String>,
    pub excluded_incidents: Vec<String>,
}

fn read_rows<T: DeserializeOwned>(path: &Path, name: &str) -> Result<Vec<T>, BundleError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => BundleError::io(path, io),
        other => BundleError::schema(name, None, None, format!("{other:?}")),
    })?;
    let headers = rdr
        .headers()
        .map_err(|e| BundleError::schema(name, Some(1), None, e.to_string()))?
        .clone();
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        let row = i + 2;
        out.push(rec.map_err(|e| {
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => {
                    err.field().and_then(|f| headers.get(f as usize)).map(str::to_string)
                }
                _ => None,
            };
            let message = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.kind().to_string(),
                _ => e.to_string(),
            };
            BundleError::Schema {
                file: name.to_string(),
                row: Some(row),
                column,
                message,
            }
        })?);
    }
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], headers: &[&str]) -> Result<(), BundleError> {
    let csv_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => BundleError::io(path, io),
        other => BundleError::schema(&path.display().to_string(), None, None, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    if rows.is_empty() {
        w.write_record(headers).map_err(csv_io)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush().map_err(|e| BundleError::io(path, e))
}

fn check_finite(file: &str, row: usize, cols: &[(&str, f64)]) -> Result<(), BundleError> {
    for (c, v) in cols {
        if !v.is_finite() {
            return Err(BundleError::schema(file, Some(row), Some(c), "value must be finite"));
        }
    }
    Ok(())
}

fn check_unique<'a>(file: &str, ids: impl Iterator<Item = &'a str>) -> Result<(), BundleError> {
    let mut seen = HashSet::new();
    for (i, id) in ids.enumerate() {
        if id.trim().is_empty() {
            return Err(BundleError::schema(file, Some(i + 2), Some("id"), "empty id"));
        }
        if !seen.insert(id) {
            return Err(BundleError::schema(file, Some(i + 2), Some("id"), format!("duplicate id '{id}'")));
        }
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, name: &str) -> Result<T, BundleError> {
    let text = std::fs::read_to_string(path).map_err(|e| BundleError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BundleError::schema(name, Some(e.line()), None, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| BundleError::io(path, e))
}

const SITE_HEADERS: [&str; 7] = ["id", "easting", "northing", "is_new", "cost", "pop_density", "dist_to_infra"];
const INCIDENT_HEADERS: [&str; 10] = [
    "id",
    "easting",
    "northing",
    "hour",
    "t_astar",
    "big_intsects",
    "mid_intsects",
    "turns",
    "pop_density",
    "length_km",
];

impl RegionBundle {
    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        let config_path = dir.join("config.toml");
        let config = if config_path.exists() {
            Config::load(&config_path)?
        } else {
            log::warn!("{} not found, using defaults", config_path.display());
            Config::default()
        };

        let site_rows: Vec<SiteRow> = read_rows(&dir.join("sites.csv"), "sites.csv")?;
        let inc_rows: Vec<IncidentRow> = read_rows(&dir.join("incidents.csv"), "incidents.csv")?;
        if site_rows.is_empty() {
            return Err(BundleError::schema("sites.csv", None, None, "no candidate sites"));
        }
        if inc_rows.is_empty() {
            return Err(BundleError::schema("incidents.csv", None, None, "no incidents"));
        }
        check_unique("sites.csv", site_rows.iter().map(|r| r.id.as_str()))?;
        check_unique("incidents.csv", inc_rows.iter().map(|r| r.id.as_str()))?;

        let elev_path = dir.join("elevation.csv");
        let elevation: Option<BTreeMap<String, f64>> = if elev_path.exists() {
            let rows: Vec<ElevationRow> = read_rows(&elev_path, "elevation.csv")?;
            let mut m = BTreeMap::new();
            for (i, r) in rows.into_iter().enumerate() {
                check_finite("elevation.csv", i + 2, &[("elevation", r.elevation)])?;
                if m.insert(r.id.clone(), r.elevation).is_some() {
                    return Err(BundleError::schema(
                        "elevation.csv",
                        Some(i + 2),
                        Some("id"),
                        format!("duplicate id '{}'", r.id),
                    ));
                }
            }
            Some(m)
        } else {
            log::warn!("no elevation.csv in {}, assuming zero elevation", dir.display());
            None
        };
        let elev = |id: &str| elevation.as_ref().and_then(|m| m.get(id)).copied().unwrap_or(0.0);

        let mut sites = Vec::with_capacity(site_rows.len());
        for (i, r) in site_rows.into_iter().enumerate() {
            let row = i + 2;
            check_finite(
                "sites.csv",
                row,
                &[
                    ("easting", r.easting),
                    ("northing", r.northing),
                    ("cost", r.cost),
                    ("pop_density", r.pop_density),
                    ("dist_to_infra", r.dist_to_infra),
                ],
            )?;
            if r.cost < 0.0 {
                return Err(BundleError::schema("sites.csv", Some(row), Some("cost"), "must be >= 0"));
            }
            if r.pop_density <= 0.0 {
                return Err(BundleError::schema("sites.csv", Some(row), Some("pop_density"), "must be > 0"));
            }
            if r.dist_to_infra < 0.0 {
                return Err(BundleError::schema("sites.csv", Some(row), Some("dist_to_infra"), "must be >= 0"));
            }
            sites.push(SiteRecord {
                location: Location::new(r.easting, r.northing, elev(&r.id)),
                id: r.id,
                is_new: r.is_new,
                cost: r.cost,
                pop_density: r.pop_density,
                dist_to_infra: r.dist_to_infra,
            });
        }

        let mut incidents = Vec::with_capacity(inc_rows.len());
        for (i, r) in inc_rows.into_iter().enumerate() {
            let row = i + 2;
            check_finite(
                "incidents.csv",
                row,
                &[
                    ("easting", r.easting),
                    ("northing", r.northing),
                    ("t_astar", r.t_astar),
                    ("big_intsects", r.big_intsects),
                    ("mid_intsects", r.mid_intsects),
                    ("turns", r.turns),
                    ("pop_density", r.pop_density),
                    ("length_km", r.length_km),
                ],
            )?;
            if r.hour > 23 {
                return Err(BundleError::schema("incidents.csv", Some(row), Some("hour"), "must lie in 0..=23"));
            }
            incidents.push(IncidentRecord {
                location: Location::new(r.easting, r.northing, elev(&r.id)),
                id: r.id,
                hour: r.hour,
                features: AmbulanceFeatures {
                    t_astar: r.t_astar,
                    big_intsects: r.big_intsects,
                    mid_intsects: r.mid_intsects,
                    turns: r.turns,
                    pop_density: r.pop_density,
                    length_km: r.length_km,
                },
            });
        }

        let nfz_path = dir.join("nfz.json");
        let nfz: Vec<NoFlyZone> = if nfz_path.exists() {
            read_json(&nfz_path, "nfz.json")?
        } else {
            Vec::new()
        };
        for (i, z) in nfz.iter().enumerate() {
            z.validate()
                .map_err(|e| BundleError::schema("nfz.json", None, None, format!("zone {i}: {e}")))?;
        }

        let stations_path = dir.join("stations.csv");
        let stations: Vec<StationRecord> = if stations_path.exists() {
            let s: Vec<StationRecord> = read_rows(&stations_path, "stations.csv")?;
            check_unique("stations.csv", s.iter().map(|r| r.id.as_str()))?;
            for (i, r) in s.iter().enumerate() {
                check_finite("stations.csv", i + 2, &[("easting", r.easting), ("northing", r.northing)])?;
            }
            s
        } else {
            Vec::new()
        };

        let nodes = dir.join("roads/nodes.csv");
        let edges = dir.join("roads/edges.csv");
        let roads = if nodes.exists() && edges.exists() {
            Some(
                read_road_graph(&nodes, &edges)
                    .map_err(|e| BundleError::schema("roads", None, None, e.to_string()))?,
            )
        } else {
            None
        };

        let sdir = dir.join("surrogates");
        let speed = sdir.join("wind_speed.json");
        let direction = sdir.join("wind_direction.json");
        let wind = match (speed.exists(), direction.exists()) {
            (true, true) => Some(WindModel {
                speed: load_gp(&speed)?,
                direction: load_gp(&direction)?,
            }),
            (false, false) => None,
            _ => {
                return Err(BundleError::schema(
                    "surrogates",
                    None,
                    None,
                    "wind needs both wind_speed.json and wind_direction.json",
                ))
            }
        };
        let amb = sdir.join("ambulance.json");
        let ambulance = if amb.exists() { Some(load_linear(&amb)?) } else { None };
        let drone_path = sdir.join("drone.json");
        let drone = if drone_path.exists() {
            Some(read_json(&drone_path, "surrogates/drone.json")?)
        } else {
            None
        };

        Ok(Self {
            config,
            sites,
            incidents,
            nfz,
            stations,
            elevation,
            roads,
            wind,
            ambulance,
            drone,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        std::fs::create_dir_all(dir).map_err(|e| BundleError::io(dir, e))?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, self.config.to_toml_string()).map_err(|e| BundleError::io(&cfg_path, e))?;
        let sites: Vec<SiteRow> = self
            .sites
            .iter()
            .map(|s| SiteRow {
                id: s.id.clone(),
                easting: s.location.easting,
                northing: s.location.northing,
                is_new: s.is_new,
                cost: s.cost,
                pop_density: s.pop_density,
                dist_to_infra: s.dist_to_infra,
            })
            .collect();
        write_rows(&dir.join("sites.csv"), &sites, &SITE_HEADERS)?;
        let incidents: Vec<IncidentRow> = self
            .incidents
            .iter()
            .map(|r| IncidentRow {
                id: r.id.clone(),
                easting: r.location.easting,
                northing: r.location.northing,
                hour: r.hour,
                t_astar: r.features.t_astar,
                big_intsects: r.features.big_intsects,
                mid_intsects: r.features.mid_intsects,
                turns: r.features.turns,
                pop_density: r.features.pop_density,
                length_km: r.features.length_km,
            })
            .collect();
        write_rows(&dir.join("incidents.csv"), &incidents, &INCIDENT_HEADERS)?;
        write_json(&dir.join("nfz.json"), &self.nfz)?;
        if !self.stations.is_empty() {
            write_rows(&dir.join("stations.csv"), &self.stations, &["id", "easting", "northing"])?;
        }
        if let Some(m) = &self.elevation {
            let rows: Vec<ElevationRow> = m
                .iter()
                .map(|(id, e)| ElevationRow {
                    id: id.clone(),
                    elevation: *e,
                })
                .collect();
            write_rows(&dir.join("elevation.csv"), &rows, &["id", "elevation"])?;
        }
        if let Some(g) = &self.roads {
            let rd = dir.join("roads");
            std::fs::create_dir_all(&rd).map_err(|e| BundleError::io(&rd, e))?;
            write_road_graph(g, &rd.join("nodes.csv"), &rd.join("edges.csv"))
                .map_err(|e| BundleError::schema("roads", None, None, e.to_string()))?;
        }
        if self.wind.is_some() || self.ambulance.is_some() || self.drone.is_some() {
            let sd = dir.join("surrogates");
            std::fs::create_dir_all(&sd).map_err(|e| BundleError::io(&sd, e))?;
            if let Some(w) = &self.wind {
                save_gp(&w.speed, &sd.join("wind_speed.json"))?;
                save_gp(&w.direction, &sd.join("wind_direction.json"))?;
            }
            if let Some(a) = &self.ambulance {
                save_linear(a, &sd.join("ambulance.json"))?;
            }
            if let Some(d) = &self.drone {
                write_json(&sd.join("drone.json"), d)?;
            }
        }
        Ok(())
    }

    pub fn wind(&self) -> Result<&WindModel, BundleError> {
        self.wind.as_ref().ok_or(BundleError::MissingSurrogate("wind"))
    }

    pub fn drone_models(&self) -> DronePhaseModels {
        self.drone.clone().unwrap_or_default()
    }

    pub fn ambulance_model(&self) -> LinearModel<f64> {
        self.ambulance.clone().unwrap_or_else(crate::demand::default_ambulance_model)
    }

    /// Drop sites and incidents that fall inside any no-fly zone.
    pub fn filtered(&self) -> Result<FilteredRegion, BundleError> {
        let nfz_err = |e: crate::flight::FlightError| BundleError::schema("nfz.json", None, None, e.to_string());
        let sxy: Vec<(f64, f64)> = self.sites.iter().map(|s| s.location.xy()).collect();
        let (keep_s, drop_s) = nfz_filter(&sxy, &self.nfz).map_err(nfz_err)?;
        let ixy: Vec<(f64, f64)> = self.incidents.iter().map(|r| r.location.xy()).collect();
        let (keep_i, drop_i) = nfz_filter(&ixy, &self.nfz).map_err(nfz_err)?;
        Ok(FilteredRegion {
            sites: keep_s.iter().map(|&j| self.sites[j].clone()).collect(),
            incidents: keep_i.iter().map(|&i| self.incidents[i].clone()).collect(),
            excluded_sites: drop_s.iter().map(|&j| self.sites[j].id.clone()).collect(),
            excluded_incidents: drop_i.iter().map(|&i| self.incidents[i].id.clone()).collect(),
        })
    }
}

/// SHA-256 of every regular file under `dir`, keyed by relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>, BundleError> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| BundleError::io(&d, e))? {
            let entry = entry.map_err(|e| BundleError::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir)
                        .expect("under dir")
                        .to_string_lossy()
                        .replace('\\', "/"),
                    hash_file(&path)?,
                );
            }
        }
    }
    Ok(out)
}

pub fn hash_file(path: &Path) -> Result<String, BundleError> {
    let bytes = std::fs::read(path).map_err(|e| BundleError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

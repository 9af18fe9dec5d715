use std::path::Path;

use semloc::encoder::EncoderWeights;
use semloc::eval::{evaluate, histogram_csv};
use semloc::io::{
    self, load_pose_list, pairs_to_jsonl, parse_pair_records, MapFile, PoseEntry, PosesFile, StereoFile,
    SummaryFile,
};
use semloc::learning::{parallel_map, train as train_weights};
use semloc::mapping::{deduplicate, triangulate};
use semloc::pipeline::{localize as localize_world, localize_local};
use semloc::synthetic::{synthesize_dataset, synthesize_stereo};
use semloc::{Error, Result};

use crate::config::Config;
use crate::LocalizeArgs;

pub fn synth(cfg: &Config, out: &Path, seed: u64, frames: usize) -> Result<()> {
    let tax = &cfg.taxonomy;
    let pairs = synthesize_dataset(&cfg.frames, frames, seed, tax)?;
    let survey = synthesize_stereo(&cfg.stereo, seed, tax)?;
    io::write_text(out.join("pairs.jsonl"), &pairs_to_jsonl(&pairs)?)?;
    io::write_text(out.join("stereo.json"), &io::to_json(&StereoFile::new(&survey.observations, tax))?)?;
    io::write_text(out.join("map_gt.json"), &io::to_json(&MapFile::new(&survey.world, tax))?)?;
    println!(
        "wrote {} frames, {} stereo observations, {} map elements to {}",
        pairs.len(),
        survey.observations.len(),
        survey.world.len(),
        out.display()
    );
    Ok(())
}

pub fn map_build(cfg: &Config, stereo: &Path, out: &Path) -> Result<()> {
    let file = StereoFile::parse(&io::read_text(stereo)?)?;
    let tax = &file.taxonomy;
    let mut points = Vec::new();
    let mut rejected = 0;
    for obs in file.observations()? {
        match triangulate(&obs, tax) {
            Ok(e) => points.push(e),
            Err(Error::DegenerateGeometry(_) | Error::Domain(_)) => rejected += 1,
            Err(e) => return Err(e),
        }
    }
    let map = deduplicate(&points, &cfg.cluster)?;
    io::write_text(out, &io::to_json(&MapFile::new(&map, tax))?)?;
    println!(
        "triangulated {} observations ({} rejected), {} elements after merging",
        points.len(),
        rejected,
        map.len()
    );
    Ok(())
}

pub fn train(cfg: &Config, pairs: &Path, out: &Path, seed: u64, history: Option<&Path>) -> Result<()> {
    let tax = &cfg.taxonomy;
    let data = io::parse_pairs(&io::read_text(pairs)?, tax)?;
    let init = EncoderWeights::init(cfg.encoder, seed)?;
    let (weights, hist) = train_weights(&data, &init, &cfg.training, seed, tax)?;
    io::save_weights(out, &weights)?;
    if let Some(path) = history {
        io::write_text(path, &hist.to_csv())?;
    }
    let last = hist.epochs.last().unwrap_or(&hist.initial);
    println!("trained {} epochs: L_c {:.4} -> {:.4}", hist.epochs.len(), hist.initial.lc, last.lc);
    Ok(())
}

pub fn localize(mut cfg: Config, args: LocalizeArgs) -> Result<()> {
    let lc = &mut cfg.localize;
    if let Some(v) = args.crop_radius {
        lc.crop_radius = v;
    }
    if let Some(v) = args.sinkhorn_mu {
        lc.sinkhorn.mu = v;
    }
    if let Some(v) = args.theta {
        lc.ransac.theta = v;
    }
    if let Some(v) = args.max_iterations {
        lc.ransac.max_iterations = v;
    }
    if let Some(v) = args.top_k {
        lc.ransac.top_k = v;
    }
    if let Some(v) = args.simple_scene_path {
        lc.simple_scene_path = v;
    }
    if let Some(p) = &args.weights_path {
        lc.weights_path = Some(p.display().to_string());
    }
    lc.validate()?;
    let tax = &cfg.taxonomy;
    let weights = match &cfg.localize.weights_path {
        Some(p) => io::load_weights(p)?,
        None => EncoderWeights::init(cfg.encoder, args.seed)?,
    };
    let map = match &args.map {
        Some(p) => Some(MapFile::parse(&io::read_text(p)?)?.elements()?),
        None => None,
    };
    let records = parse_pair_records(&io::read_text(&args.input)?)?;
    let indexed: Vec<(usize, &io::PairRecord)> = records.iter().enumerate().collect();
    let lcfg = &cfg.localize;
    let results = parallel_map(&indexed, args.threads, |&(index, rec)| {
        let pair = rec.to_pair(tax)?;
        let (result, gt_pose) = match &map {
            Some(map) => {
                let prior = rec
                    .prior
                    .ok_or_else(|| Error::Config(format!("frame {index} has no prior for map localization")))?;
                let to_local = prior.local_to_world().inverse();
                let gt = pair.gt_pose.compose(&to_local);
                (localize_world(&pair.elements2d, map, &prior, &weights, tax, lcfg), gt)
            }
            None => (localize_local(&pair.elements2d, &pair.submap, &weights, tax, lcfg), pair.gt_pose),
        };
        Ok(match result {
            Ok(l) => (
                PoseEntry {
                    index,
                    pose: Some(l.pose),
                    gt_pose: Some(gt_pose),
                    error: None,
                    diagnostics: Some(l.diagnostics),
                },
                None,
            ),
            Err(e) => (
                PoseEntry { index, pose: None, gt_pose: Some(gt_pose), error: Some(e.to_string()), diagnostics: None },
                Some(e),
            ),
        })
    })?;
    let frame = if map.is_some() { "world" } else { "local" };
    let (entries, errors): (Vec<PoseEntry>, Vec<Option<Error>>) = results.into_iter().unzip();
    let ok = entries.iter().filter(|e| e.pose.is_some()).count();
    io::write_text(&args.out, &io::to_json(&PosesFile::new(frame, entries))?)?;
    println!("localized {ok}/{} frames", records.len());
    // A batch where nothing localized reports the first frame's failure.
    match errors.into_iter().flatten().next() {
        Some(e) if ok == 0 => Err(e),
        _ => Ok(()),
    }
}

pub fn eval(cfg: &Config, estimates: &Path, truth: &Path, out: &Path) -> Result<()> {
    let est = load_pose_list(&io::read_text(estimates)?)?;
    let gt: Vec<_> = load_pose_list(&io::read_text(truth)?)?
        .into_iter()
        .enumerate()
        .map(|(k, p)| p.ok_or_else(|| Error::Config(format!("ground-truth entry {k} has no pose"))))
        .collect::<Result<_>>()?;
    let summary = evaluate(&est, &gt, &cfg.eval)?;
    match &summary.rte_stats {
        Some(s) => println!(
            "{} frames, {} failures, median RTE {:.4} m, {:.1}% under {} m",
            summary.frames,
            summary.failures,
            s.q2,
            100.0 * summary.fraction_rte_under,
            summary.rte_threshold
        ),
        None => println!("{} frames, all failed", summary.frames),
    }
    io::write_text(out, &io::to_json(&SummaryFile::new(summary))?)
}

pub fn plot_data(summary: &Path, out: &Path) -> Result<()> {
    let file = SummaryFile::parse(&io::read_text(summary)?)?;
    io::write_text(out, &histogram_csv(&file.summary))
}

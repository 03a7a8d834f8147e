//! Command-line front end: run attack scenarios, reproduce the applicability
//! matrix, explore reachable state combinations, and list platform profiles.
//!
//! Exit codes: 0 on success with the expected outcome, 1 when an `--expect`
//! check fails, 2 on configuration errors.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use phantomlab_core::policy::{format_flaw_set, Flaw, Mitigation, PolicyConfig};
use phantomlab_core::scenarios::{
    attack_matrix, explore_reachable, matrix_matches_table3, run_attack_with, table3_fixture,
    AttackKind, AttackScale, CellOutcome, GrantSpec, PlatformProfile, ProfileName, ScenarioOutcome,
    ScenarioSpec,
};

#[derive(Parser)]
#[command(
    name = "phantomlab",
    version,
    about = "Deterministic security testbed for cloud-based smart-home platforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (an attack against a victim life-cycle).
    Run(RunArgs),
    /// Run every profile against every attack and print the matrix.
    Matrix(MatrixArgs),
    /// Enumerate reachable state combinations breadth-first.
    Explore(ExploreArgs),
    /// List the built-in platform profiles.
    ListProfiles,
}

#[derive(Args)]
struct RunArgs {
    /// Platform profile (alink, joylink, kasa, mijia, smartthings).
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Attack to run.
    #[arg(long, value_enum)]
    attack: Option<AttackArg>,
    /// Scenario file (TOML: profile, attack, flaws, mitigations, grants, seed).
    #[arg(long, conflicts_with_all = ["profile", "attack"])]
    scenario: Option<PathBuf>,
    /// Override the profile's flaw set (comma-separated, e.g. F1.1,F1.3,F3).
    #[arg(long, value_delimiter = ',')]
    flaws: Option<Vec<String>>,
    /// Deployed mitigations (comma-separated from M1,M2,M3).
    #[arg(long, value_delimiter = ',', default_value = "")]
    mitigations: Vec<String>,
    /// Information grants: full (local access) or remote-only.
    #[arg(long, default_value = "full")]
    grants: String,
    /// Scenario seed; falls back to PHANTOMLAB_SEED.
    #[arg(long, env = "PHANTOMLAB_SEED", default_value_t = 0)]
    seed: u64,
    /// Run attacker operations at full experimental scale.
    #[arg(long)]
    desk_scale: bool,
    /// Write the event trace as line-delimited JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the scenario report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fail (exit 1) unless the outcome matches: success, failure,
    /// not-applicable.
    #[arg(long)]
    expect: Option<ExpectArg>,
}

#[derive(Args)]
struct MatrixArgs {
    /// Deployed mitigations applied to every cell.
    #[arg(long, value_delimiter = ',', default_value = "")]
    mitigations: Vec<String>,
    #[arg(long, env = "PHANTOMLAB_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the machine-readable matrix as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fail (exit 1) unless the matrix matches the built-in fixture: table3.
    #[arg(long)]
    expect: Option<String>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long, value_enum)]
    profile: ProfileArg,
    #[arg(long, value_delimiter = ',')]
    flaws: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_value = "")]
    mitigations: Vec<String>,
    /// Maximum number of interactions to explore.
    #[arg(long, default_value_t = 12)]
    depth: u32,
    #[arg(long, env = "PHANTOMLAB_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the reachability report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Alink,
    Joylink,
    Kasa,
    Mijia,
    Smartthings,
}

impl From<ProfileArg> for ProfileName {
    fn from(arg: ProfileArg) -> Self {
        match arg {
            ProfileArg::Alink => ProfileName::Alink,
            ProfileArg::Joylink => ProfileName::Joylink,
            ProfileArg::Kasa => ProfileName::Kasa,
            ProfileArg::Mijia => ProfileName::Mijia,
            ProfileArg::Smartthings => ProfileName::SmartThings,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Substitution,
    Hijacking,
    Dos,
    Occupation,
    FirmwareTheft,
    /// Legitimate life-cycle only, no attacker.
    Baseline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExpectArg {
    Success,
    Failure,
    NotApplicable,
}

impl ExpectArg {
    fn matches(self, outcome: CellOutcome) -> bool {
        matches!(
            (self, outcome),
            (ExpectArg::Success, CellOutcome::Success)
                | (ExpectArg::Failure, CellOutcome::Failure)
                | (ExpectArg::NotApplicable, CellOutcome::NotApplicable)
        )
    }
}

fn parse_flaws(raw: &Option<Vec<String>>) -> Result<Option<BTreeSet<Flaw>>> {
    match raw {
        None => Ok(None),
        Some(list) => {
            let mut flaws = BTreeSet::new();
            for item in list.iter().filter(|s| !s.is_empty()) {
                flaws.insert(item.parse::<Flaw>().context("bad --flaws value")?);
            }
            Ok(Some(flaws))
        }
    }
}

fn parse_mitigations(raw: &[String]) -> Result<BTreeSet<Mitigation>> {
    let mut mitigations = BTreeSet::new();
    for item in raw.iter().filter(|s| !s.is_empty()) {
        mitigations.insert(item.parse::<Mitigation>().context("bad --mitigations value")?);
    }
    Ok(mitigations)
}

fn outcome_report(outcome: &ScenarioOutcome, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "profile": outcome.profile.name(),
        "attack": outcome.attack.name(),
        "seed": seed,
        "status": outcome.status.to_string(),
        "not_applicable_reason": outcome.not_applicable_reason,
        "predicates": outcome
            .predicate_report
            .iter()
            .map(|(name, ok)| serde_json::json!({"clause": name, "holds": ok}))
            .collect::<Vec<_>>(),
        "exploited_flaws": outcome
            .exploited_flaws
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>(),
        "final_combination": outcome.final_combo.indices(),
        "trace_records": outcome.trace.records.len(),
    })
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (profile_name, attack, flaws, mitigations, grants, seed) =
        if let Some(path) = &args.scenario {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading scenario {}", path.display()))?;
            let spec = ScenarioSpec::from_toml(&text).context("parsing scenario file")?;
            (
                spec.profile,
                Some(spec.attack),
                spec.flaws,
                spec.mitigations,
                spec.grants,
                spec.seed,
            )
        } else {
            let profile = args
                .profile
                .map(ProfileName::from)
                .context("--profile (or --scenario) is required")?;
            let attack = match args.attack.context("--attack (or --scenario) is required")? {
                AttackArg::Substitution => Some(AttackKind::Substitution),
                AttackArg::Hijacking => Some(AttackKind::Hijacking),
                AttackArg::Dos => Some(AttackKind::DoS),
                AttackArg::Occupation => Some(AttackKind::Occupation),
                AttackArg::FirmwareTheft => Some(AttackKind::FirmwareTheft),
                AttackArg::Baseline => None,
            };
            (
                profile,
                attack,
                parse_flaws(&args.flaws)?,
                parse_mitigations(&args.mitigations)?,
                args.grants.parse::<GrantSpec>().context("bad --grants")?,
                args.seed,
            )
        };

    let profile = PlatformProfile::of(profile_name);
    // Validate the policy up front: a platform-mismatched flaw override is a
    // configuration error, not a scenario outcome.
    PolicyConfig::new(
        profile.platform,
        flaws
            .clone()
            .unwrap_or_else(|| profile.identified_flaws.clone()),
        mitigations.clone(),
    )
    .context("invalid policy for this platform type")?;
    let scale = if args.desk_scale {
        AttackScale::desk()
    } else {
        AttackScale::matrix()
    };

    let Some(attack) = attack else {
        // Baseline run: the legitimate life-cycle alone.
        let (result, world) =
            phantomlab_core::scenarios::run_baseline(&profile, mitigations, seed);
        let combo = world.combo();
        println!("profile:    {profile_name}");
        println!("scenario:   baseline life-cycle");
        match &result {
            Ok(()) => println!("outcome:    COMPLETE"),
            Err(e) => println!("outcome:    FAILED ({e})"),
        }
        println!("final:      {combo}");
        println!("all legal:  {}", world.trace.all_legal());
        if let Some(path) = &args.trace {
            std::fs::write(path, world.trace.to_jsonl())?;
            println!("trace:      {}", path.display());
        }
        let ok = result.is_ok() && world.trace.all_legal();
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
    };

    let outcome = run_attack_with(&profile, attack, flaws, mitigations, grants, seed, scale);

    println!("profile:    {profile_name}");
    println!("attack:     {attack}");
    println!("seed:       {seed}");
    match outcome.status {
        CellOutcome::Success => println!(
            "outcome:    SUCCESS, flaws={}",
            format_flaw_set(&outcome.exploited_flaws)
        ),
        CellOutcome::Failure => println!("outcome:    FAILURE"),
        CellOutcome::NotApplicable => println!(
            "outcome:    NOT APPLICABLE ({})",
            outcome.not_applicable_reason.as_deref().unwrap_or("-")
        ),
    }
    for (clause, holds) in &outcome.predicate_report {
        println!("  [{}] {clause}", if *holds { "x" } else { " " });
    }
    println!("final:      {}", outcome.final_combo);
    println!("trace len:  {} records", outcome.trace.records.len());

    if let Some(path) = &args.trace {
        std::fs::write(path, outcome.trace.to_jsonl())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("trace:      {}", path.display());
    }
    if let Some(path) = &args.report {
        let report = outcome_report(&outcome, seed);
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("report:     {}", path.display());
    }

    if let Some(expect) = args.expect {
        if !expect.matches(outcome.status) {
            eprintln!("expectation failed: outcome is {}", outcome.status);
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_matrix(args: MatrixArgs) -> Result<ExitCode> {
    let mitigations = parse_mitigations(&args.mitigations)?;
    let matrix = attack_matrix(mitigations, args.seed);
    print!("{}", matrix.render());

    if let Some(path) = &args.report {
        let mut cells = serde_json::Map::new();
        for (profile, row) in &matrix.cells {
            let mut json_row = serde_json::Map::new();
            for (attack, cell) in row {
                json_row.insert(
                    attack.name().to_owned(),
                    serde_json::Value::String(cell.to_string()),
                );
            }
            cells.insert(
                profile.name().to_owned(),
                serde_json::Value::Object(json_row),
            );
        }
        let json = serde_json::json!({ "seed": args.seed, "cells": cells });
        std::fs::write(path, serde_json::to_string_pretty(&json)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("report: {}", path.display());
    }

    if let Some(expect) = &args.expect {
        if expect != "table3" {
            anyhow::bail!("unknown --expect fixture: {expect} (try table3)");
        }
        if matrix_matches_table3(&matrix) {
            println!("matrix matches the table3 fixture");
        } else {
            eprintln!("matrix DIFFERS from the table3 fixture; expected:");
            eprint!("{}", table3_fixture().render());
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_explore(args: ExploreArgs) -> Result<ExitCode> {
    let profile = PlatformProfile::of(args.profile.into());
    let flaws = parse_flaws(&args.flaws)?.unwrap_or_else(|| profile.identified_flaws.clone());
    let mitigations = parse_mitigations(&args.mitigations)?;
    let policy = PolicyConfig::new(profile.platform, flaws, mitigations)
        .context("invalid policy for this platform type")?;
    let report = explore_reachable(&profile, &policy, args.depth, args.seed);

    println!(
        "explored {} world states to depth {}",
        report.states_visited, report.depth
    );
    println!("reachable combinations ({}):", report.reached.len());
    for combo in &report.reached {
        let marker = if report.illegal.contains(combo) {
            "ILLEGAL"
        } else {
            "legal"
        };
        println!("  {combo}  {marker}");
    }
    println!("illegal subset size: {}", report.illegal.len());

    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("report: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_list_profiles() -> ExitCode {
    println!(
        "{:<13}{:<9}{:<28}{:<44}quirks",
        "profile", "type", "identified flaws", "information schema"
    );
    for profile in PlatformProfile::all() {
        let flaws = format_flaw_set(&profile.identified_flaws);
        let schema = profile
            .info_schema
            .iter()
            .map(|(field, category)| {
                let tag = match category {
                    phantomlab_core::identity::InfoCategory::Public => "P",
                    phantomlab_core::identity::InfoCategory::Guessable => "G",
                    phantomlab_core::identity::InfoCategory::HardCoded => "H",
                };
                format!("{field}({tag})")
            })
            .collect::<Vec<_>>()
            .join(" ");
        let quirks = profile
            .quirks
            .iter()
            .map(|q| format!("{q:?}"))
            .collect::<Vec<_>>()
            .join(" ");
        let platform = match profile.platform {
            phantomlab_core::states::PlatformType::TypeI => "type-I",
            phantomlab_core::states::PlatformType::TypeII => "type-II",
        };
        println!(
            "{:<13}{:<9}{:<28}{:<44}{}",
            profile.name.name(),
            platform,
            flaws,
            schema,
            quirks
        );
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Explore(args) => cmd_explore(args),
        Command::ListProfiles => Ok(cmd_list_profiles()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

// Command-line front end: dataset generation, the two training stages, field
// evaluation, braking-surrogate fitting, closed-loop simulation suites, and
// direct distance-oracle inspection. Every artifact is a pure function of the
// flags and the seed, so reruns are byte-identical.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sdfmpc/braking.hpp"
#include "sdfmpc/checkpoint.hpp"
#include "sdfmpc/core.hpp"
#include "sdfmpc/field.hpp"
#include "sdfmpc/formats.hpp"
#include "sdfmpc/net.hpp"
#include "sdfmpc/nlp.hpp"
#include "sdfmpc/oracle.hpp"
#include "sdfmpc/render.hpp"
#include "sdfmpc/scene.hpp"
#include "sdfmpc/sim.hpp"
#include "sdfmpc/train.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdfmpc;

namespace {

// --------------------------------------------------------------------------
// JSON config: default values for the active subcommand's flags; flags given
// on the command line win. Applied before CLI11 parses, so parsing overrides.

struct JsonDefaults {
  json data = json::object();
  std::set<std::string> known;

  template <typename T>
  void get(const std::string& key, T& var) {
    known.insert(key);
    if (data.contains(key)) var = data.at(key).get<T>();
  }

  void check_unknown() const {
    for (const auto& item : data.items())
      if (!known.count(item.key()))
        throw std::runtime_error("config: unknown key '" + item.key() + "'");
  }
};

JsonDefaults load_json_defaults(int argc, char** argv) {
  JsonDefaults cfg;
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0) path = arg.substr(9);
  }
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  in >> cfg.data;
  if (!cfg.data.is_object()) throw std::runtime_error("config: top level must be an object");
  return cfg;
}

std::vector<int> parse_widths(const std::string& text) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t comma = std::min(text.find(',', pos), text.size());
    const std::string tok = text.substr(pos, comma - pos);
    if (!tok.empty()) out.push_back(std::stoi(tok));
    pos = comma + 1;
  }
  if (out.empty()) throw std::runtime_error("widths: expected a comma-separated list");
  return out;
}

int default_jobs() {
  return std::max(1u, std::thread::hardware_concurrency());
}

// --------------------------------------------------------------------------
// Dataset manifest.

struct ManifestEntry {
  std::string scene;                // file name, relative to the dataset dir
  std::vector<std::string> images;  // file names, relative to the dataset dir
};

struct Manifest {
  std::uint64_t seed = 0;
  int width = 0, height = 0;
  FrustumSpec frustum;
  std::vector<ManifestEntry> entries;
};

void save_manifest(const Manifest& m, const std::string& dir) {
  json j;
  j["seed"] = m.seed;
  j["width"] = m.width;
  j["height"] = m.height;
  j["frustum"] = {{"alpha_h", m.frustum.alpha_h},
                  {"alpha_v", m.frustum.alpha_v},
                  {"d_max", m.frustum.d_max}};
  j["entries"] = json::array();
  for (const ManifestEntry& e : m.entries)
    j["entries"].push_back({{"scene", e.scene}, {"images", e.images}});
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  out << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("no dataset manifest at " + dir + "/manifest.json");
  json j;
  in >> j;
  Manifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.width = j.at("width").get<int>();
  m.height = j.at("height").get<int>();
  m.frustum.alpha_h = j.at("frustum").at("alpha_h").get<double>();
  m.frustum.alpha_v = j.at("frustum").at("alpha_v").get<double>();
  m.frustum.d_max = j.at("frustum").at("d_max").get<double>();
  for (const auto& e : j.at("entries")) {
    ManifestEntry entry;
    entry.scene = e.at("scene").get<std::string>();
    for (const auto& img : e.at("images")) entry.images.push_back(img.get<std::string>());
    m.entries.push_back(std::move(entry));
  }
  return m;
}

std::vector<RangeImage> load_dataset(const std::string& dir) {
  const Manifest m = load_manifest(dir);
  std::vector<RangeImage> images;
  for (const ManifestEntry& e : m.entries)
    for (const std::string& name : e.images)
      images.push_back(load_range_image(dir + "/" + name));
  if (images.empty()) throw std::runtime_error("dataset at " + dir + " holds no images");
  return images;
}

// --------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string out;
  int scenes = 6;
  int poses = 8;
  int width = 64, height = 48;
  double noise_std = 0.01;
  double dropout = 0.0;
  std::uint64_t seed = 1;
};

int run_gen_data(const GenDataArgs& args) {
  fs::create_directories(args.out);
  const FrustumSpec frustum;
  Manifest manifest;
  manifest.seed = args.seed;
  manifest.width = args.width;
  manifest.height = args.height;
  manifest.frustum = frustum;

  const Vec3 start(0, 0, 1.5), goal(11, 0, 1.5);
  for (int s = 0; s < args.scenes; ++s) {
    const std::uint64_t scene_seed = splitmix64(stream_seed(args.seed, "gen-scene") + s);
    const SceneSpec scene = make_pillar_scene(PillarSceneParams{}, start, goal, scene_seed);

    char scene_name[64];
    std::snprintf(scene_name, sizeof(scene_name), "scene_%03d.json", s);
    save_scene(scene, args.out + "/" + scene_name);

    ManifestEntry entry;
    entry.scene = scene_name;

    auto pose_rng = rng_stream(scene_seed, "gen-pose");
    auto obs_rng = rng_stream(scene_seed, "gen-obs");
    std::uniform_real_distribution<double> ux(-1.0, 6.0), uy(-3.0, 3.0), uz(1.0, 2.0);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    RenderOptions opt;
    opt.noise_std = args.noise_std;
    opt.dropout_prob = args.dropout;

    for (int p = 0; p < args.poses; ++p) {
      Vec3 pos;
      do {
        pos = Vec3(ux(pose_rng), uy(pose_rng), uz(pose_rng));
      } while (scene_sdf(scene, pos) < 0.6);
      const double yaw = std::atan2(-pos.y(), 5.5 - pos.x()) + jitter(pose_rng);
      Pose pose;
      pose.R = rot_z(yaw);
      pose.t = pos;
      const RangeImage img = render_range_image(scene, pose, frustum, args.width, args.height,
                                                opt, &obs_rng);
      char img_name[64];
      std::snprintf(img_name, sizeof(img_name), "img_%03d_%02d.rimg", s, p);
      save_range_image(img, args.out + "/" + img_name);
      entry.images.push_back(img_name);
    }
    manifest.entries.push_back(std::move(entry));
  }
  save_manifest(manifest, args.out);
  std::cout << "wrote " << args.scenes << " scenes x " << args.poses << " poses to " << args.out
            << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// train encoder

struct TrainEncoderArgs {
  std::string data;
  std::string out = "encoder.ckpt";
  std::string decoder_out;
  std::string loss_csv;
  int epochs = 30;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch = 16;
  double w_bias = 0.01;
  double beta = 1.0;
  int latent_dim = 16;
  std::string widths = "256,128";
  std::uint64_t seed = 1;
};

int run_train_encoder(const TrainEncoderArgs& args) {
  const std::vector<RangeImage> dataset = load_dataset(args.data);
  EncoderTrainConfig cfg;
  cfg.epochs = args.epochs;
  cfg.lr = args.lr;
  cfg.momentum = args.momentum;
  cfg.batch_size = args.batch;
  cfg.w_bias = args.w_bias;
  cfg.beta_norm = args.beta;
  cfg.latent_dim = args.latent_dim;
  cfg.widths = parse_widths(args.widths);
  cfg.seed = args.seed;

  std::vector<LossRecord> log;
  const TrainedVae vae = train_encoder(dataset, cfg, &log);
  save_encoder_checkpoint(vae.encoder, args.out);
  if (!args.decoder_out.empty())
    save_decoder_checkpoint(vae.decoder, vae.encoder.latent_dim, args.decoder_out);
  if (!args.loss_csv.empty()) save_loss_csv(log, args.loss_csv);

  double val_total = 0.0;
  for (const LossRecord& r : log)
    if (r.split == "val" && r.loss_name == "total" && r.epoch == cfg.epochs - 1)
      val_total = r.value;
  std::cout << "trained encoder on " << dataset.size() << " images, final val total "
            << format_double(val_total) << ", saved to " << args.out << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// train sdf

struct TrainSdfArgs {
  std::string data;
  std::string encoder;
  std::string out = "field.ckpt";
  std::string loss_csv;
  int epochs = 40;
  double lr = 1e-3;
  double momentum = 0.9;
  int points = 256;
  double lambda_grad = 0.5;
  double t_sdf = 1.0;
  int bands = 2;
  std::string widths = "256,256,128,64";
  std::uint64_t seed = 1;
  int jobs = default_jobs();
};

int run_train_sdf(const TrainSdfArgs& args) {
  if (args.encoder.empty() || !fs::exists(args.encoder))
    throw std::runtime_error("train sdf: needs a trained encoder checkpoint (--encoder)");
  const Encoder encoder = load_encoder_checkpoint(args.encoder);
  const std::vector<RangeImage> dataset = load_dataset(args.data);

  EmbeddingSpec spec;
  spec.bands = args.bands;
  const SineMlp net = SineMlp::make(spec, encoder.latent_dim, parse_widths(args.widths),
                                    args.seed);
  SdfTrainConfig cfg;
  cfg.epochs = args.epochs;
  cfg.lr = args.lr;
  cfg.momentum = args.momentum;
  cfg.lambda_grad = args.lambda_grad;
  cfg.points_per_image = args.points;
  cfg.t_sdf = args.t_sdf;
  cfg.seed = args.seed;
  cfg.jobs = args.jobs;

  std::vector<LossRecord> log;
  const SineMlp trained = train_sdf(encoder, dataset, net, cfg, &log);
  save_field_checkpoint(trained, args.out);
  if (!args.loss_csv.empty()) save_loss_csv(log, args.loss_csv);

  double last_total = 0.0;
  for (const LossRecord& r : log)
    if (r.loss_name == "total") last_total = r.value;
  std::cout << "trained field on " << dataset.size() << " images, final total "
            << format_double(last_total) << ", saved to " << args.out << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// eval-sdf

struct EvalSdfArgs {
  std::string data;
  std::string encoder;
  std::string field;
  std::string out;
  double grid_step = 0.1;
  double t_sdf = 1.0;
  int image = -1;  // all images when negative
  int jobs = default_jobs();
};

int run_eval_sdf(const EvalSdfArgs& args) {
  const Encoder encoder = load_encoder_checkpoint(args.encoder);
  const SineMlp net = load_field_checkpoint(args.field);
  const std::vector<RangeImage> dataset = load_dataset(args.data);
  if (args.image >= static_cast<int>(dataset.size()))
    throw std::runtime_error("eval-sdf: image index out of range");

  double sq_sum = 0.0, grad_sum = 0.0;
  long n_value = 0, n_grad = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (args.image >= 0 && static_cast<int>(i) != args.image) continue;
    const VecX z = latent_code(encoder, dataset[i]);
    const SdfEvalReport r =
        evaluate_sdf(net, z, dataset[i], args.grid_step, args.t_sdf, args.jobs);
    sq_sum += r.value_rmse * r.value_rmse * static_cast<double>(r.n_value);
    grad_sum += r.grad_dir_err_deg * static_cast<double>(r.n_grad);
    n_value += r.n_value;
    n_grad += r.n_grad;
  }
  if (n_value == 0) throw std::runtime_error("eval-sdf: empty evaluation grid");

  json j;
  j["value_rmse_m"] = std::sqrt(sq_sum / static_cast<double>(n_value));
  j["grad_dir_err_deg"] = n_grad > 0 ? grad_sum / static_cast<double>(n_grad) : 0.0;
  j["n_value"] = n_value;
  j["n_grad"] = n_grad;
  std::cout << j.dump(2) << "\n";
  if (!args.out.empty()) {
    std::ofstream out(args.out);
    if (!out) throw std::runtime_error("cannot write " + args.out);
    out << j.dump(2) << "\n";
  }
  return 0;
}

// --------------------------------------------------------------------------
// fit-braking

struct FitBrakingArgs {
  int degree = 6;
  int min_degree = 3;
  int max_degree = 7;
  double radius = 3.0;
  double grid_step = 0.05;
  std::string out;
};

int run_fit_braking(const FitBrakingArgs& args) {
  const BrakingFitReport report = fit_braking_polynomial(
      VehicleParams{}, args.degree, args.max_degree, args.radius, args.grid_step);
  CsvTable table;
  table.header = {"degree", "coefficients", "rmse"};
  for (size_t i = 0; i < report.degrees.size(); ++i) {
    if (report.degrees[i] < args.min_degree) continue;
    table.rows.push_back({std::to_string(report.degrees[i]),
                          std::to_string(report.coefficients[i]),
                          format_double(report.rmse[i])});
  }
  std::cout << "degree,coefficients,rmse\n";
  for (const auto& row : table.rows) std::cout << row[0] << ',' << row[1] << ',' << row[2] << "\n";
  if (!args.out.empty()) save_csv(table, args.out);
  std::cerr << "chosen degree " << report.chosen.degree << ": rmse "
            << format_double(report.chosen.rmse) << " m, underestimate bound "
            << format_double(report.chosen.max_underestimate) << " m\n";
  return 0;
}

// --------------------------------------------------------------------------
// sim

struct SimArgs {
  std::string scenario = "pillars";  // pillars | empty
  std::string out = ".";
  int seeds = 10;
  std::uint64_t seed = 1;
  double timeout = 30.0;
  double v_ref = 1.5;
  double goal_x = 11.0;
  double d_min = 1.2;
  double pos_noise = 0.03, vel_noise = 0.05, yaw_noise = 0.03, obs_noise = 0.01;
  double wrench = 0.05;
  double drift_vel = 0.0, drift_walk = 0.0;
  bool adversarial = false;
  bool no_rti = false;
  bool save_traces = false;
  bool neural = false;
  std::string encoder;
  std::string field;
  double poly_step = 0.05;
  int jobs = default_jobs();
};

int run_sim(const SimArgs& args) {
  if (args.scenario != "pillars" && args.scenario != "empty")
    throw std::runtime_error("sim: scenario must be 'pillars' or 'empty'");

  SimAssets assets;
  assets.poly = fit_braking_polynomial(assets.params, 6, 6, assets.params.bounds.vel_max,
                                       args.poly_step)
                    .chosen;
  Encoder encoder;
  SineMlp field_net;
  if (args.neural) {
    if (args.encoder.empty() || args.field.empty())
      throw std::runtime_error("sim: --neural needs --encoder and --field checkpoints");
    encoder = load_encoder_checkpoint(args.encoder);
    field_net = load_field_checkpoint(args.field);
    assets.encoder = &encoder;
    assets.field_net = &field_net;
  }

  RolloutConfig cfg;
  cfg.goal = Vec3(args.goal_x, 0.0, 1.5);
  cfg.timeout = args.timeout;
  cfg.v_ref_mag = args.v_ref;
  cfg.noise.pos_std = args.pos_noise;
  cfg.noise.vel_std = args.vel_noise;
  cfg.noise.yaw_std = args.yaw_noise;
  cfg.noise.obs_std = args.obs_noise;
  cfg.noise.wrench_std = args.wrench;
  cfg.drift.vel_noise_std = args.drift_vel;
  cfg.drift.random_walk_std = args.drift_walk;
  cfg.adversarial = args.adversarial;
  cfg.use_rti = !args.no_rti;
  cfg.neural_field = args.neural;
  if (args.scenario == "pillars") {
    PillarSceneParams pillars;
    pillars.d_min = args.d_min;
    const Vec3 start = cfg.start, goal = cfg.goal;
    cfg.scene_gen = [pillars, start, goal](std::uint64_t seed) {
      return make_pillar_scene(pillars, start, goal, seed);
    };
  }

  const std::vector<SuiteOverride> overrides = {{"baseline", nullptr}};
  const SuiteResult result = run_suite(cfg, assets, args.seed, args.seeds, overrides, args.jobs);

  fs::create_directories(args.out);
  save_metrics_csv(result, args.out + "/metrics.csv");
  if (args.save_traces) {
    for (int k = 0; k < args.seeds; ++k) {
      char name[64];
      std::snprintf(name, sizeof(name), "trace_%llu.jsonl",
                    static_cast<unsigned long long>(rollout_seed(args.seed, k)));
      save_trace_jsonl(result.records[0][static_cast<size_t>(k)], args.out + "/" + name);
    }
  }
  for (const SuiteRow& row : result.rows)
    std::cout << row.label << ": success " << format_double(row.success_rate) << ", failure "
              << format_double(row.failure_rate) << ", timeout "
              << format_double(row.timeout_rate) << ", mean speed "
              << format_double(row.mean_avg_speed) << " m/s\n";
  return 0;
}

// --------------------------------------------------------------------------
// oracle

struct OracleArgs {
  std::string image;
  std::string points;
  std::string out;
  double t_sdf = 1.0;
  int jobs = default_jobs();
};

int run_oracle(const OracleArgs& args) {
  const RangeImage img = load_range_image(args.image);
  const CsvTable in = load_csv(args.points);

  int cx = -1, cy = -1, cz = -1;
  for (size_t i = 0; i < in.header.size(); ++i) {
    if (in.header[i] == "x") cx = static_cast<int>(i);
    if (in.header[i] == "y") cy = static_cast<int>(i);
    if (in.header[i] == "z") cz = static_cast<int>(i);
  }
  if (cx < 0 || cy < 0 || cz < 0)
    throw std::runtime_error("oracle: points csv needs x,y,z columns");

  std::vector<Vec3> points;
  points.reserve(in.rows.size());
  for (const auto& row : in.rows)
    points.emplace_back(std::stod(row[static_cast<size_t>(cx)]),
                        std::stod(row[static_cast<size_t>(cy)]),
                        std::stod(row[static_cast<size_t>(cz)]));

  const DistanceOracle oracle(img, args.t_sdf);
  const std::vector<DistanceSample> samples = oracle.eval_batch(points, args.jobs);

  CsvTable table;
  table.header = {"x", "y", "z", "value", "gx", "gy", "gz"};
  for (const DistanceSample& s : samples)
    table.rows.push_back({format_double(s.point.x()), format_double(s.point.y()),
                          format_double(s.point.z()), format_double(s.value),
                          format_double(s.grad_dir.x()), format_double(s.grad_dir.y()),
                          format_double(s.grad_dir.z())});

  if (args.out.empty()) {
    std::cout << "x,y,z,value,gx,gy,gz\n";
    for (const auto& row : table.rows) {
      for (size_t i = 0; i < row.size(); ++i)
        std::cout << row[i] << (i + 1 < row.size() ? "," : "");
      std::cout << "\n";
    }
  } else {
    save_csv(table, args.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  JsonDefaults config;
  try {
    config = load_json_defaults(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"Range-sensing collision-avoidance toolkit: data generation, distance-field "
               "training, braking fits and closed-loop simulation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON file of default flag values; explicit flags win");

  GenDataArgs gen;
  config.get("out", gen.out);
  config.get("scenes", gen.scenes);
  config.get("poses", gen.poses);
  config.get("width", gen.width);
  config.get("height", gen.height);
  config.get("noise-std", gen.noise_std);
  config.get("dropout", gen.dropout);
  config.get("seed", gen.seed);
  CLI::App* gen_cmd =
      app.add_subcommand("gen-data", "Render range-image datasets over procedural scenes");
  gen_cmd->fallthrough();
  gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "number of procedural scenes");
  gen_cmd->add_option("--poses", gen.poses, "sensor poses rendered per scene");
  gen_cmd->add_option("--width", gen.width, "image width (px)");
  gen_cmd->add_option("--height", gen.height, "image height (px)");
  gen_cmd->add_option("--noise-std", gen.noise_std, "range noise sigma (m)");
  gen_cmd->add_option("--dropout", gen.dropout, "per-pixel dropout probability");
  gen_cmd->add_option("--seed", gen.seed, "master seed")->envname("SDFNMPC_SEED");

  CLI::App* train_cmd = app.add_subcommand("train", "Train the observation encoder or the "
                                                    "distance field");
  train_cmd->require_subcommand(1);
  train_cmd->fallthrough();

  TrainEncoderArgs te;
  config.get("data", te.data);
  config.get("encoder-out", te.out);
  config.get("decoder-out", te.decoder_out);
  config.get("loss-csv", te.loss_csv);
  config.get("epochs", te.epochs);
  config.get("lr", te.lr);
  config.get("momentum", te.momentum);
  config.get("batch", te.batch);
  config.get("w-bias", te.w_bias);
  config.get("beta", te.beta);
  config.get("latent-dim", te.latent_dim);
  config.get("widths", te.widths);
  config.get("seed", te.seed);
  CLI::App* te_cmd = train_cmd->add_subcommand(
      "encoder", "Variational encoder over normalized range images");
  te_cmd->fallthrough();
  te_cmd->add_option("--data", te.data, "dataset directory with manifest.json")->required();
  te_cmd->add_option("--out", te.out, "encoder checkpoint path");
  te_cmd->add_option("--decoder-out", te.decoder_out, "also save the decoder checkpoint");
  te_cmd->add_option("--loss-csv", te.loss_csv, "write per-epoch losses to this CSV");
  te_cmd->add_option("--epochs", te.epochs, "training epochs");
  te_cmd->add_option("--lr", te.lr, "SGD learning rate");
  te_cmd->add_option("--momentum", te.momentum, "SGD momentum");
  te_cmd->add_option("--batch", te.batch, "minibatch size (images)");
  te_cmd->add_option("--w-bias", te.w_bias, "reconstruction weight at the far plane");
  te_cmd->add_option("--beta", te.beta, "normalized divergence scale");
  te_cmd->add_option("--latent-dim", te.latent_dim, "latent code size");
  te_cmd->add_option("--widths", te.widths, "hidden widths, comma separated");
  te_cmd->add_option("--seed", te.seed, "training seed")->envname("SDFNMPC_SEED");

  TrainSdfArgs ts;
  config.get("data", ts.data);
  config.get("encoder", ts.encoder);
  config.get("field-out", ts.out);
  config.get("loss-csv", ts.loss_csv);
  config.get("epochs", ts.epochs);
  config.get("lr", ts.lr);
  config.get("momentum", ts.momentum);
  config.get("points", ts.points);
  config.get("lambda-grad", ts.lambda_grad);
  config.get("t-sdf", ts.t_sdf);
  config.get("bands", ts.bands);
  config.get("widths", ts.widths);
  config.get("seed", ts.seed);
  config.get("jobs", ts.jobs);
  CLI::App* ts_cmd = train_cmd->add_subcommand(
      "sdf", "Latent-conditioned truncated distance field (needs a trained encoder)");
  ts_cmd->fallthrough();
  ts_cmd->add_option("--data", ts.data, "dataset directory with manifest.json")->required();
  ts_cmd->add_option("--encoder", ts.encoder, "trained encoder checkpoint")->required();
  ts_cmd->add_option("--out", ts.out, "field checkpoint path");
  ts_cmd->add_option("--loss-csv", ts.loss_csv, "write per-epoch losses to this CSV");
  ts_cmd->add_option("--epochs", ts.epochs, "training epochs");
  ts_cmd->add_option("--lr", ts.lr, "SGD learning rate");
  ts_cmd->add_option("--momentum", ts.momentum, "SGD momentum");
  ts_cmd->add_option("--points", ts.points, "supervision points per image");
  ts_cmd->add_option("--lambda-grad", ts.lambda_grad, "gradient-term weight");
  ts_cmd->add_option("--t-sdf", ts.t_sdf, "distance truncation (m)");
  ts_cmd->add_option("--bands", ts.bands, "positional-embedding frequency bands");
  ts_cmd->add_option("--widths", ts.widths, "four hidden widths, comma separated");
  ts_cmd->add_option("--seed", ts.seed, "training seed")->envname("SDFNMPC_SEED");
  ts_cmd->add_option("--jobs", ts.jobs, "worker threads");

  EvalSdfArgs ev;
  config.get("data", ev.data);
  config.get("encoder", ev.encoder);
  config.get("field", ev.field);
  config.get("eval-out", ev.out);
  config.get("grid-step", ev.grid_step);
  config.get("t-sdf", ev.t_sdf);
  config.get("image", ev.image);
  config.get("jobs", ev.jobs);
  CLI::App* ev_cmd = app.add_subcommand(
      "eval-sdf", "Grid evaluation of a trained field against the distance oracle");
  ev_cmd->fallthrough();
  ev_cmd->add_option("--data", ev.data, "dataset directory with manifest.json")->required();
  ev_cmd->add_option("--encoder", ev.encoder, "trained encoder checkpoint")->required();
  ev_cmd->add_option("--field", ev.field, "trained field checkpoint")->required();
  ev_cmd->add_option("--out", ev.out, "also write the JSON report here");
  ev_cmd->add_option("--grid-step", ev.grid_step, "evaluation grid spacing (m)");
  ev_cmd->add_option("--t-sdf", ev.t_sdf, "distance truncation (m)");
  ev_cmd->add_option("--image", ev.image, "restrict to one image index (-1 = all)");
  ev_cmd->add_option("--jobs", ev.jobs, "worker threads");

  FitBrakingArgs fb;
  config.get("degree", fb.degree);
  config.get("min-degree", fb.min_degree);
  config.get("max-degree", fb.max_degree);
  config.get("radius", fb.radius);
  config.get("grid-step", fb.grid_step);
  config.get("fit-out", fb.out);
  CLI::App* fb_cmd = app.add_subcommand(
      "fit-braking", "Fit the polynomial stopping-distance surrogate and report RMSE per degree");
  fb_cmd->fallthrough();
  fb_cmd->add_option("--degree", fb.degree, "degree kept for the controller");
  fb_cmd->add_option("--min-degree", fb.min_degree, "first degree reported");
  fb_cmd->add_option("--max-degree", fb.max_degree, "last degree reported");
  fb_cmd->add_option("--radius", fb.radius, "velocity fit ball radius (m/s)");
  fb_cmd->add_option("--grid-step", fb.grid_step, "velocity grid spacing (m/s)");
  fb_cmd->add_option("--out", fb.out, "also write the per-degree CSV here");

  SimArgs sim;
  config.get("scenario", sim.scenario);
  config.get("sim-out", sim.out);
  config.get("seeds", sim.seeds);
  config.get("seed", sim.seed);
  config.get("timeout", sim.timeout);
  config.get("v-ref", sim.v_ref);
  config.get("goal-x", sim.goal_x);
  config.get("d-min", sim.d_min);
  config.get("pos-noise", sim.pos_noise);
  config.get("vel-noise", sim.vel_noise);
  config.get("yaw-noise", sim.yaw_noise);
  config.get("obs-noise", sim.obs_noise);
  config.get("wrench", sim.wrench);
  config.get("drift-vel", sim.drift_vel);
  config.get("drift-walk", sim.drift_walk);
  config.get("adversarial", sim.adversarial);
  config.get("no-rti", sim.no_rti);
  config.get("save-traces", sim.save_traces);
  config.get("neural", sim.neural);
  config.get("encoder", sim.encoder);
  config.get("field", sim.field);
  config.get("poly-step", sim.poly_step);
  config.get("jobs", sim.jobs);
  CLI::App* sim_cmd =
      app.add_subcommand("sim", "Closed-loop rollout suites with metrics and traces");
  sim_cmd->fallthrough();
  sim_cmd->add_option("--scenario", sim.scenario, "'pillars' or 'empty'");
  sim_cmd->add_option("--out", sim.out, "output directory for metrics.csv and traces");
  sim_cmd->add_option("--seeds", sim.seeds, "rollouts per row");
  sim_cmd->add_option("--seed", sim.seed, "suite base seed")->envname("SDFNMPC_SEED");
  sim_cmd->add_option("--timeout", sim.timeout, "rollout time limit (s)");
  sim_cmd->add_option("--v-ref", sim.v_ref, "reference speed (m/s)");
  sim_cmd->add_option("--goal-x", sim.goal_x, "goal x coordinate (m)");
  sim_cmd->add_option("--d-min", sim.d_min, "pillar spacing (m)");
  sim_cmd->add_option("--pos-noise", sim.pos_noise, "position measurement sigma (m)");
  sim_cmd->add_option("--vel-noise", sim.vel_noise, "velocity measurement sigma (m/s)");
  sim_cmd->add_option("--yaw-noise", sim.yaw_noise, "heading measurement sigma (rad)");
  sim_cmd->add_option("--obs-noise", sim.obs_noise, "range observation sigma (m)");
  sim_cmd->add_option("--wrench", sim.wrench, "disturbance acceleration sigma (m/s^2)");
  sim_cmd->add_option("--drift-vel", sim.drift_vel, "odometry white noise sigma (m/s)");
  sim_cmd->add_option("--drift-walk", sim.drift_walk,
                      "odometry bias random walk sigma (m/s per sqrt(s))");
  sim_cmd->add_flag("--adversarial", sim.adversarial,
                    "aim the reference at the nearest obstacle");
  sim_cmd->add_flag("--no-rti", sim.no_rti, "full SQP solve every control period");
  sim_cmd->add_flag("--save-traces", sim.save_traces, "write per-rollout JSONL traces");
  sim_cmd->add_flag("--neural", sim.neural, "constrain on the learned field");
  sim_cmd->add_option("--encoder", sim.encoder, "encoder checkpoint (neural mode)");
  sim_cmd->add_option("--field", sim.field, "field checkpoint (neural mode)");
  sim_cmd->add_option("--poly-step", sim.poly_step, "braking fit grid spacing (m/s)");
  sim_cmd->add_option("--jobs", sim.jobs, "parallel rollouts");

  OracleArgs orc;
  config.get("image", orc.image);
  config.get("points-csv", orc.points);
  config.get("oracle-out", orc.out);
  config.get("t-sdf", orc.t_sdf);
  config.get("jobs", orc.jobs);
  CLI::App* orc_cmd =
      app.add_subcommand("oracle", "Query the pixel-space distance oracle of one observation");
  orc_cmd->require_subcommand(1);
  orc_cmd->fallthrough();
  CLI::App* orc_eval = orc_cmd->add_subcommand(
      "eval", "Evaluate value and gradient direction at points listed in a CSV");
  orc_eval->fallthrough();
  orc_eval->add_option("--image", orc.image, "range image (.rimg)")->required();
  orc_eval->add_option("--points", orc.points, "CSV of query points with x,y,z columns")
      ->required();
  orc_eval->add_option("--out", orc.out, "write the result CSV here instead of stdout");
  orc_eval->add_option("--t-sdf", orc.t_sdf, "distance truncation (m)");
  orc_eval->add_option("--jobs", orc.jobs, "worker threads");

  try {
    app.parse(argc, argv);
    config.check_unknown();
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*te_cmd) return run_train_encoder(te);
    if (*ts_cmd) return run_train_sdf(ts);
    if (*ev_cmd) return run_eval_sdf(ev);
    if (*fb_cmd) return run_fit_braking(fb);
    if (*sim_cmd) return run_sim(sim);
    if (*orc_eval) return run_oracle(orc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

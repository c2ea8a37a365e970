// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <cvgl/eval.hpp>
#include <cvgl/rankings_io.hpp>
#include <cvgl/synthetic.hpp>
#include <cvgl/trainer.hpp>
#include <cvgl/vlm_http.hpp>

#include "cli_support.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cvgl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// Guards each criterion so one crash does not hide the others.
template <typename F>
void criterion(const char* name, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

void gradient_check() {
  const auto t0 = Clock::now();
  const std::size_t ns[] = {2, 4, 8};
  const std::size_t ds[] = {4, 16};
  std::size_t checked = 0, failed = 0;
  double worst = 0, worst_abs = 0;
  std::string first;
  for (std::uint64_t c = 0; c < 100; ++c) {
    const auto r = gradcheck::check(ns[c % 3], ds[(c / 3) % 2], 1000 + c);
    checked += r.checked;
    failed += r.failed;
    worst = std::max(worst, r.worst_rel);
    worst_abs = std::max(worst_abs, r.worst_abs);
    if (first.empty() && r.failed) first = r.first_failure;
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "100 configs, " << checked << " components, " << failed << " outside 1e-5 rel / 1e-8 abs, worst abs "
     << fmt("%.2e", worst_abs) << ", worst rel above floor " << fmt("%.2e", worst) << ", " << fmt("%.2f", secs) << " s";
  if (!first.empty()) os << ", first: " << first;
  report("infonce-gradient-check", failed == 0 && secs < 30.0, os.str());
}

void closed_form() {
  const double single = info_nce_loss(Matrix::from_rows({{0.6, 0.8}}), Matrix::from_rows({{0.0, 1.0}}), 2.0).loss;
  const auto eye = Matrix::from_rows({{1, 0}, {0, 1}});
  const double pair = info_nce_loss(eye, eye, 0.0).loss;
  const double expected = std::log1p(std::exp(-1.0));
  const bool ok = single == 0.0 && std::abs(pair - expected) <= 1e-6 && std::abs(pair - 0.313262) <= 1e-6;
  report("infonce-closed-form", ok,
         "n=1 loss " + fmt("%.17g", single) + ", n=2 identity loss " + fmt("%.12f", pair) + " vs log(1+e^-1) " +
             fmt("%.12f", expected));
}

void adamw_and_schedule() {
  auto run = [](int steps) {
    std::vector<double> w{1.0};
    AdamWState state;
    const AdamWConfig cfg{1e-3, 0.9, 0.999, 1e-8, 0.01};
    const std::vector<double> g{0.5};
    for (int i = 0; i < steps; ++i) {
      const std::span<double> p[] = {w};
      const std::span<const double> gs[] = {g};
      adamw_step(p, gs, state, cfg);
    }
    return w[0];
  };
  oracle::AdamW ref{1e-3, 0.9, 0.999, 1e-8, 0.01, {}, {}, 0};
  std::vector<double> w{1.0};
  ref.step(w, {0.5});
  const double oracle1 = w[0];
  ref.step(w, {0.5});
  const double oracle2 = w[0];
  const double one = run(1), two = run(2);
  const double hand1 = 0.998990000019999999600;  // evaluated at 30 digits
  bool ok = std::abs(one - oracle1) <= 1e-12 && std::abs(two - oracle2) <= 1e-12 && std::abs(one - hand1) <= 1e-12;

  std::size_t schedule_bad = 0;
  long double product = 1e-5L;
  for (std::uint64_t e = 0; e < 100; ++e) {
    const double lr = lr_at(e, 1e-5, 0.9);
    if (lr != 1e-5 * std::pow(0.9, static_cast<double>(e))) ++schedule_bad;
    if (std::abs(static_cast<long double>(lr) - product) > 1e-13L * product) ++schedule_bad;
    product *= 0.9L;
  }
  ok = ok && schedule_bad == 0 && lr_at(0, 1e-5, 0.9) == 1e-5;
  report("adamw-and-lr-schedule", ok,
         "step1 " + fmt("%.15f", one) + " (oracle " + fmt("%.15f", oracle1) + "), step2 " + fmt("%.15f", two) +
             " (oracle " + fmt("%.15f", oracle2) + "), schedule mismatches over e=0..99: " +
             std::to_string(schedule_bad));
}

void retrieval_oracle() {
  Xoshiro256 rng(2024);
  const std::size_t dim = 32;
  EmbeddingTable refs(dim);
  auto random_vec = [&] {
    EmbeddingVector v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
  };
  for (int i = 0; i < 1000; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "ref%04d", i);
    refs.insert(id, random_vec());
  }
  // explicit ties: the same vector under several ids, inserted out of order
  const auto tied = random_vec();
  for (const char* id : {"tie_c", "tie_a", "tie_b"}) refs.insert(id, tied);
  const auto index = build_index(refs);
  std::map<std::string, std::vector<float>> rows;
  for (std::size_t i = 0; i < index.size(); ++i) rows[index.ids()[i]] = {index.row(i).begin(), index.row(i).end()};

  std::size_t compared = 0, mismatched = 0;
  auto compare = [&](const EmbeddingVector& q) {
    for (std::size_t k : {1, 5, 10, 37}) {
      const auto got = query_topk(index, q, k);
      const auto want = oracle::full_sort_topk(rows, q, k);
      ++compared;
      bool same = got.entries.size() == want.size();
      for (std::size_t i = 0; same && i < want.size(); ++i)
        same = got.entries[i].id == want[i].id && got.entries[i].score == want[i].score;
      if (!same) ++mismatched;
    }
  };
  for (int q = 0; q < 200; ++q) compare(l2_normalize(random_vec()));
  const auto tq = l2_normalize(tied);
  compare(tq);
  const auto top3 = query_topk(index, tq, 3);
  const bool ties_ok = top3.entries[0].id == "tie_a" && top3.entries[1].id == "tie_b" && top3.entries[2].id == "tie_c" &&
                       top3.entries[0].score == top3.entries[2].score;
  report("retrieval-oracle", mismatched == 0 && ties_ok,
         std::to_string(compared) + " (query, k) cases over 1003 refs, " + std::to_string(mismatched) +
             " mismatches; tie order " + top3.entries[0].id + "," + top3.entries[1].id + "," + top3.entries[2].id);
}

class PermutationClient : public VlmClient {
 public:
  explicit PermutationClient(std::uint64_t seed) : seed_(seed) {}
  VlmReply send(const RerankRequest& r, const RerankContext& c) override {
    std::uint64_t h = seed_;
    for (unsigned char ch : c.query_id) h = derive_seed(h, ch);
    Xoshiro256 rng(h);
    std::vector<std::size_t> perm(r.k());
    std::iota(perm.begin(), perm.end(), 1);
    shuffle(std::span(perm), rng);
    return {200, to_json(RerankResponse{perm, "permuted"}).dump(), {}};
  }

 private:
  std::uint64_t seed_;
};

void recall_invariance() {
  synthetic::Options opt;
  opt.locations = 25;
  opt.street_per_location = 1;
  opt.queries_per_location = 2;
  opt.noise = 1.0;
  const auto ds = synthetic::generate(opt);
  const auto index = build_index(ds.gallery);
  std::vector<RankedList> lists;
  for (const auto& [id, v] : ds.queries) lists.push_back(query_topk(index, l2_normalize(v), 10, id));
  const auto truth = truth_from_manifest(ds.test);
  const std::vector<std::size_t> ks{1, 5, 10};
  const auto pre = recall_at_k(lists, truth, ks);
  const auto images = [](const std::string&) { return ImagePayload{"image/png", "eA=="}; };

  std::size_t violations = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    PermutationClient client(rep);
    const auto out = rerank_all(client, lists, images, {}, 4);
    std::vector<RankedList> after;
    for (const auto& o : out) after.push_back(o.final);
    if (recall_at_k(after, truth, ks).recall.at(10) != pre.recall.at(10)) ++violations;
  }

  MockVlmServer server(MockOptions{MockMode::Oracle, truth, std::chrono::milliseconds(2000)});
  server.start();
  HttpVlmClient http(server.url(), std::chrono::seconds(10));
  const auto oracle_out = rerank_all(http, lists, images, {}, 4);
  std::vector<RankedList> after;
  for (const auto& o : oracle_out) after.push_back(o.final);
  const auto post = recall_at_k(after, truth, ks);
  const bool ok = violations == 0 && post.recall.at(1) == pre.recall.at(10) && lists.size() == 50;
  report("rerank-r10-invariance", ok,
         std::to_string(lists.size()) + " queries x 20 permutations, " + std::to_string(violations) +
             " R@10 changes (pre R@10 " + percent(pre.recall.at(10)) + "); oracle mock: pre R@1 " +
             percent(pre.recall.at(1)) + " -> post R@1 " + percent(post.recall.at(1)) + ", pre R@10 " +
             percent(pre.recall.at(10)));
}

struct TrainedEval {
  double r1, r5, r10, first_loss, last_loss, secs;
};

TrainedEval train_and_eval(const synthetic::Dataset& ds, double p_drone) {
  TrainConfig cfg;  // defaults: batch 32, lr 1e-5, gamma 0.9
  cfg.epochs = 50;
  cfg.p_drone = p_drone;
  cfg.seed = 2025;
  const auto t0 = Clock::now();
  const auto result = train(ds.train, ds.tables, cfg);
  const auto index = build_index(project_table(result.model.sat_head, ds.gallery));
  const auto queries = project_table(result.model.street_head, ds.queries);
  const auto lists = query_batch(index, queries, 10);
  const auto rep = recall_at_k(lists, truth_from_manifest(ds.test), {1, 5, 10});
  return {rep.recall.at(1), rep.recall.at(5), rep.recall.at(10), result.epoch_losses.front(),
          result.epoch_losses.back(), seconds_since(t0)};
}

void synthetic_training() {
  const auto ds = synthetic::generate({});
  std::map<double, TrainedEval> rows;
  for (double p : {0.0, 0.3, 1.0}) rows[p] = train_and_eval(ds, p);
  const auto& main = rows.at(0.3);
  const bool ok = main.r1 >= 0.95 && main.last_loss < main.first_loss && rows.size() == 3;
  std::ostringstream os;
  os << "defaults, 50 epochs, p_drone 0.3: R@1 " << fmt("%.4f", main.r1) << ", loss " << fmt("%.4f", main.first_loss)
     << " -> " << fmt("%.4f", main.last_loss);
  report("synthetic-training", ok, os.str());
  for (const auto& [p, r] : rows) {
    std::printf("     p_drone=%.1f  R@1 %s  R@5 %s  R@10 %s  loss %.4f -> %.4f  (%.1f s)\n", p, percent(r.r1).c_str(),
                percent(r.r5).c_str(), percent(r.r10).c_str(), r.first_loss, r.last_loss, r.secs);
  }
}

void fallback_totality() {
  std::vector<RankedList> lists;
  Xoshiro256 rng(500);
  for (int q = 0; q < 500; ++q) {
    RankedList l{"query/" + std::to_string(q), {}};
    const std::size_t n = 1 + rng.below(15);  // some lists shorter than K
    for (std::size_t i = 0; i < n; ++i) l.entries.push_back({"ref/" + std::to_string(q) + "_" + std::to_string(i), 1.0 - 0.01 * i});
    lists.push_back(std::move(l));
  }
  MockVlmServer server(MockOptions{MockMode::Fuzz, {}, std::chrono::milliseconds(250)});
  server.start();
  HttpVlmClient client(server.url(), std::chrono::milliseconds(100));
  const auto images = [](const std::string&) { return ImagePayload{"image/png", "eA=="}; };
  const auto t0 = Clock::now();
  const auto out = rerank_all(client, lists, images, {}, 8);

  std::size_t invalid = 0, reranked = 0;
  std::map<std::string, std::size_t> kinds;
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const auto& f = out[i].final;
    std::set<std::string> a, b;
    for (const auto& e : lists[i].entries) a.insert(e.id);
    for (const auto& e : f.entries) b.insert(e.id);
    const bool valid = f.query_id == lists[i].query_id && f.entries.size() == lists[i].entries.size() && a == b &&
                       (out[i].used_vlm != out[i].failure.has_value()) && (out[i].used_vlm || f == lists[i]);
    if (!valid) ++invalid;
    if (out[i].used_vlm) ++reranked;
    if (out[i].failure) ++kinds[std::string(to_string(*out[i].failure))];
  }
  std::ostringstream os;
  os << out.size() << "/500 returned, " << invalid << " invalid, " << reranked << " re-ranked; fallbacks:";
  for (const auto& [k, n] : kinds) os << " " << k << "=" << n;
  os << " (" << fmt("%.1f", seconds_since(t0)) << " s)";
  const bool covered = kinds.count("TransportError") && kinds.count("NotJson") && kinds.count("WrongLength");
  report("rerank-fallback-totality", out.size() == 500 && invalid == 0 && covered, os.str());
}

void pipeline_determinism() {
  const auto demo = cli::fresh_dir("acceptance_demo");
  const auto made = cli::run("demo --out " + cli::quote(demo.string()));
  if (made.code != 0) {
    report("pipeline-determinism", false, "demo failed: " + made.output);
    return;
  }
  std::vector<fs::path> outs;
  for (const char* name : {"run_a", "run_b"}) {
    const auto out = demo / name;
    const auto r = cli::run("pipeline --config " + cli::quote((demo / "demo.json").string()) +
                            " --mock identity --seed 11 --out-dir " + cli::quote(out.string()));
    if (r.code != 0) {
      report("pipeline-determinism", false, std::string(name) + " exited " + std::to_string(r.code) + ": " + r.output);
      return;
    }
    outs.push_back(out);
  }
  std::size_t files = 0;
  std::vector<std::string> differ;
  for (const auto& entry : fs::directory_iterator(outs[0])) {
    const auto name = entry.path().filename();
    if (name.extension() != ".jsonl") continue;
    ++files;
    if (cli::slurp(outs[0] / name) != cli::slurp(outs[1] / name)) differ.push_back(name.string());
  }
  const bool model_same = cli::slurp(outs[0] / "model.cvgm") == cli::slurp(outs[1] / "model.cvgm");
  std::string detail = std::to_string(files) + " JSONL artifacts compared, " + std::to_string(differ.size()) + " differ";
  for (const auto& d : differ) detail += " " + d;
  detail += model_same ? "; model identical" : "; model differs";
  report("pipeline-determinism", files >= 3 && differ.empty() && model_same, detail);
}

}  // namespace

int main() {
  criterion("infonce-gradient-check", gradient_check);
  criterion("infonce-closed-form", closed_form);
  criterion("adamw-and-lr-schedule", adamw_and_schedule);
  criterion("retrieval-oracle", retrieval_oracle);
  criterion("rerank-r10-invariance", recall_invariance);
  criterion("synthetic-training", synthetic_training);
  criterion("rerank-fallback-totality", fallback_totality);
  criterion("pipeline-determinism", pipeline_determinism);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

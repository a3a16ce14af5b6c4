#include "seqmark/watermark.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace seqmark {

using nlohmann::json;

void WatermarkSequence::validate() const {
  if (items.size() < 2) throw Error("watermark must have length >= 2");
  std::set<ItemId> distinct(items.begin(), items.end());
  if (distinct.size() != items.size()) throw Error("watermark items must be pairwise distinct");
  if (distinct.count(kPaddingItem)) throw Error("watermark must not contain the padding id");
}

void ReceptiveFieldSpec::validate() const {
  if (before < 0 || after < 0) throw Error("receptive field counts must be >= 0");
}

namespace {

json rf_to_json(const ReceptiveFieldSpec& rf) {
  return json{{"before", rf.before}, {"after", rf.after}, {"whole_sequence", rf.whole_sequence}};
}

ReceptiveFieldSpec rf_from_json(const json& j) {
  ReceptiveFieldSpec rf;
  rf.before = j.at("before").get<int>();
  rf.after = j.at("after").get<int>();
  rf.whole_sequence = j.at("whole_sequence").get<bool>();
  return rf;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write record file: " + path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open record file: " + path);
  json j;
  in >> j;
  return j;
}

}  // namespace

void save_watermark_record(const WatermarkRecord& rec, const std::string& path) {
  json j;
  j["variant"] = "dataset";
  j["watermark_items"] = rec.watermark.items;
  j["seed"] = rec.seed;
  j["requested_ratio"] = rec.requested_ratio;
  j["target_count"] = rec.target_count;
  j["achieved_count"] = rec.achieved_count;
  j["partial"] = rec.partial;
  j["rf"] = rf_to_json(rec.rf);
  j["constraint"] = rec.constraint == ConstraintMode::unique_fillers ? "unique-fillers" : "none";
  json ins = json::array();
  for (const auto& i : rec.insertions) ins.push_back({{"user", i.user}, {"pos", i.pos}});
  j["insertions"] = ins;
  j["filler_items"] = std::vector<ItemId>(rec.filler_items.begin(), rec.filler_items.end());
  write_json(j, path);
}

WatermarkRecord load_watermark_record(const std::string& path) {
  json j = read_json(path);
  if (j.at("variant").get<std::string>() != "dataset") {
    throw Error("record is not a dataset watermark: " + path);
  }
  WatermarkRecord rec;
  rec.watermark.items = j.at("watermark_items").get<std::vector<ItemId>>();
  rec.seed = j.at("seed").get<std::uint64_t>();
  rec.requested_ratio = j.at("requested_ratio").get<double>();
  rec.target_count = j.at("target_count").get<int>();
  rec.achieved_count = j.at("achieved_count").get<int>();
  rec.partial = j.at("partial").get<bool>();
  rec.rf = rf_from_json(j.at("rf"));
  rec.constraint = j.at("constraint").get<std::string>() == "none" ? ConstraintMode::none
                                                                   : ConstraintMode::unique_fillers;
  for (const auto& i : j.at("insertions")) {
    rec.insertions.push_back({i.at("user").get<std::int64_t>(), i.at("pos").get<int>()});
  }
  auto fillers = j.at("filler_items").get<std::vector<ItemId>>();
  rec.filler_items.insert(fillers.begin(), fillers.end());
  return rec;
}

void save_user_plan(const UserWatermarkPlan& plan, const std::string& path) {
  json j;
  j["variant"] = "user";
  j["watermark_items"] = plan.watermark.items;
  j["seed"] = plan.seed;
  j["target_user"] = plan.target_user;
  j["n"] = plan.n;
  j["insert_pos"] = plan.insert_pos;
  j["c_n_start"] = plan.c_n_start;
  j["c_n_avg_pop"] = plan.c_n_avg_pop;
  j["position_mode"] = plan.position_mode;
  j["pool_group_sizes"] = plan.pool_group_sizes;
  j["pool_expansions"] = plan.pool_expansions;
  write_json(j, path);
}

UserWatermarkPlan load_user_plan(const std::string& path) {
  json j = read_json(path);
  if (j.at("variant").get<std::string>() != "user") {
    throw Error("record is not a user watermark: " + path);
  }
  UserWatermarkPlan plan;
  plan.watermark.items = j.at("watermark_items").get<std::vector<ItemId>>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.target_user = j.at("target_user").get<std::int64_t>();
  plan.n = j.at("n").get<int>();
  plan.insert_pos = j.at("insert_pos").get<int>();
  plan.c_n_start = j.at("c_n_start").get<int>();
  plan.c_n_avg_pop = j.at("c_n_avg_pop").get<double>();
  plan.position_mode = j.at("position_mode").get<std::string>();
  plan.pool_group_sizes = j.at("pool_group_sizes").get<std::vector<int>>();
  plan.pool_expansions = j.at("pool_expansions").get<int>();
  return plan;
}

std::string record_variant(const std::string& path) {
  return read_json(path).at("variant").get<std::string>();
}

}  // namespace seqmark

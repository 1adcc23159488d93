#pragma once

#include <cstdlib>
#include <stdexcept>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "lpe/evaluation.hpp"

namespace lpe {

// HTTP judge client. Speaks a minimal chat-completion-style protocol:
//   POST /score   {instruction, question, emotion, response}
//                 -> {"content": n, "empathy": n, "clarity": n}
//   POST /compare {instruction, context, first, second}
//                 -> {"winner": "first" | "second" | "tie"}
// Auth token is read from the LPE_JUDGE_TOKEN environment variable.
class HttpJudge : public Judge {
 public:
  static constexpr const char* kScoreInstruction =
      "Score the response from 1-5 on three dimensions given the question and "
      "the speaker's emotion. Reply with JSON: "
      "{\"content\": int, \"empathy\": int, \"clarity\": int}.";
  static constexpr const char* kCompareInstruction =
      "Given the context, decide which response is the better empathetic "
      "reply. Reply with JSON: {\"winner\": \"first\" | \"second\" | \"tie\"}.";

  HttpJudge(const std::string& host, int port, int timeout_seconds = 30)
      : client_(host, port) {
    client_.set_read_timeout(timeout_seconds, 0);
    client_.set_connection_timeout(timeout_seconds, 0);
    if (const char* token = std::getenv("LPE_JUDGE_TOKEN"))
      client_.set_default_headers({{"Authorization", std::string("Bearer ") + token}});
  }

  JudgeScore score(const std::string& question, const std::string& emotion,
                   const std::string& response) override {
    nlohmann::json req = {{"instruction", kScoreInstruction},
                          {"question", question},
                          {"emotion", emotion},
                          {"response", response}};
    nlohmann::json rep = post("/score", req);
    JudgeScore s;
    s.content = rep.at("content").get<int>();
    s.empathy = rep.at("empathy").get<int>();
    s.clarity = rep.at("clarity").get<int>();
    return s;
  }

  Verdict prefer(const std::string& context, const std::string& first,
                 const std::string& second) override {
    nlohmann::json req = {{"instruction", kCompareInstruction},
                          {"context", context},
                          {"first", first},
                          {"second", second}};
    nlohmann::json rep = post("/compare", req);
    const std::string winner = rep.at("winner").get<std::string>();
    if (winner == "first") return Verdict::a_wins;
    if (winner == "second") return Verdict::b_wins;
    if (winner == "tie") return Verdict::tie;
    throw std::runtime_error("judge returned unknown winner token: " + winner);
  }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) {
    auto res = client_.Post(path, body.dump(), "application/json");
    if (!res) throw std::runtime_error("judge unreachable (" + path + ")");
    if (res->status != 200)
      throw std::runtime_error("judge error " + std::to_string(res->status) + " on " + path);
    return nlohmann::json::parse(res->body);
  }

  httplib::Client client_;
};

}  // namespace lpe
